fn main() {
    std::process::exit(flowdistill_cli::run(std::env::args().skip(1).collect()));
}

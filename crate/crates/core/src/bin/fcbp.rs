fn main() {
    std::process::exit(fcbp::cli::run(std::env::args_os()));
}

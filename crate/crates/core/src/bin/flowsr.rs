fn main() {
    std::process::exit(flowsr::cli::run(std::env::args_os()));
}

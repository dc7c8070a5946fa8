fn main() {
    std::process::exit(cyclecon::cli::run(std::env::args_os()));
}

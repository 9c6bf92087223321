fn main() {
    std::process::exit(driftback::cli::run(std::env::args_os()));
}

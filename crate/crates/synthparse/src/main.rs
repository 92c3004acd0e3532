fn main() {
    std::process::exit(synthparse::cli::run(std::env::args_os()));
}

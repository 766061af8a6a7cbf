fn main() {
    std::process::exit(trustlens::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(covara_cli::run(std::env::args_os()));
}

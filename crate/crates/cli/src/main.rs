fn main() {
    std::process::exit(entroscale_cli::run(std::env::args_os()));
}

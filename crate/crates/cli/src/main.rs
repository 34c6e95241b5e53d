fn main() {
    std::process::exit(hsprior_cli::run_cli(std::env::args_os()));
}

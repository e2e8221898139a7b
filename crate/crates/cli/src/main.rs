fn main() {
    std::process::exit(gwer_cli::run_cli(std::env::args_os()));
}

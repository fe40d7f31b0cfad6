fn main() {
    std::process::exit(tsen_cli::run_cli(std::env::args_os()));
}

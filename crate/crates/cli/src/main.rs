fn main() {
    std::process::exit(relnet_cli::run_cli(std::env::args_os()));
}

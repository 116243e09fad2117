fn main() {
    std::process::exit(framot_cli::run_cli(std::env::args_os()));
}

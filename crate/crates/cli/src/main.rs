fn main() {
    std::process::exit(imucal_cli::run_cli(std::env::args_os()));
}

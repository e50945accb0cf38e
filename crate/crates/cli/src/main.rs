fn main() {
    std::process::exit(automr_cli::run(std::env::args_os()));
}

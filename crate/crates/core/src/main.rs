fn main() {
    std::process::exit(ristrack::cli::run_command(std::env::args_os()));
}

fn main() {
    std::process::exit(promptssm::cli::run_command(std::env::args_os()));
}

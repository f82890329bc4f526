fn main() {
    std::process::exit(drdqn_cli::cli::run(std::env::args_os()));
}

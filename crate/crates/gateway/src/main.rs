fn main() {
    std::process::exit(confetty_gateway::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(acceptor_spin_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(rigpose_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(idur_cli::run(std::env::args_os()));
}

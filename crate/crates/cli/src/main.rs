fn main() {
    std::process::exit(haipw_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(moller_bte::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(rramtopo::cli::run_from(std::env::args_os()));
}

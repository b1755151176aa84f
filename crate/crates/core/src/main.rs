fn main() {
    std::process::exit(bandreg::cli::run(std::env::args_os()));
}

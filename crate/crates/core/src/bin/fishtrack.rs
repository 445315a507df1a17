fn main() {
    std::process::exit(fishtrack::cli::run(std::env::args_os()));
}

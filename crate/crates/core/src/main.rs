fn main() {
    std::process::exit(ramap_forge::cli::run(std::env::args_os()));
}

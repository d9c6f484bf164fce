fn main() {
    std::process::exit(twinmask::cli::run(std::env::args_os()));
}

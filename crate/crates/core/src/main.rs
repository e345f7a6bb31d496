fn main() {
    std::process::exit(cardiofuse::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(swarmrace::cli::run(std::env::args_os()));
}

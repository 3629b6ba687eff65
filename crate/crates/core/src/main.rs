fn main() {
    std::process::exit(dashgame::cli::run(std::env::args_os()));
}

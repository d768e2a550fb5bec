fn main() {
    std::process::exit(dhmp::cli::main());
}

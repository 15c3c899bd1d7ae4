fn main() {
    std::process::exit(lars_ue::cli::main());
}

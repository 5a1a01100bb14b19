fn main() {
    std::process::exit(surjcycle::cli::main_entry());
}

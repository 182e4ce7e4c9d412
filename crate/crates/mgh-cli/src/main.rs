fn main() {
    eprintln!("mgh: not yet wired");
    std::process::exit(1);
}

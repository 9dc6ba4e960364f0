fn main() {
    // Placeholder while the core library comes up; replaced by the real CLI.
}

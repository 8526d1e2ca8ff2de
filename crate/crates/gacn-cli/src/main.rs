fn main() {
    println!("gacn placeholder");
}

fn main() {
    println!("mixflow");
}

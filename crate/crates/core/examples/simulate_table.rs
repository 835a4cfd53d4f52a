use trivine::*;
fn main() {
    let text = std::fs::read_to_string(std::env::args().nth(1).unwrap()).unwrap();
    let sc = SimScenario::from_toml_str(&text).unwrap();
    let data = generate_dataset(&sc, 0).unwrap();
    let ids: Vec<String> = (1..=data.len()).map(|i| format!("S{i:02}")).collect();
    print!("{}", trivine::io::format_input(&ids, &data).unwrap());
}

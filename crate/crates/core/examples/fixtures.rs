//! Text tensor fixtures: write, read back, and check the round trip is exact.
//!
//! ```bash
//! cargo run --example fixtures
//! ```

use uniformer::fixture::{parse_fixture, read_fixture, to_fixture_string, write_fixture};
use uniformer::tensor::seeded_random_tensor;

fn main() -> uniformer::Result<()> {
    let t = seeded_random_tensor([1, 3, 2], 126)?;
    let text = to_fixture_string(&t);
    print!("{text}");
    assert_eq!(parse_fixture(&text)?, t);

    let path = std::env::temp_dir().join("uniformer_fixture_example.txt");
    write_fixture(&t, &path)?;
    let back = read_fixture(&path)?;
    println!("round trip through {} bitwise equal: {}", path.display(), back == t);

    match parse_fixture("1 2 2\n0.5 0.25\n") {
        Err(e) => println!("truncated fixture: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

//! Regenerates `data/bounds.json` from the reference families.

fn main() {
    print!("{}", scgenie::analysis::NormalizationBounds::derive().to_json());
}

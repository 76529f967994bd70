//! Source codes to standard concepts, and rule-based demographic mapping.

use caremart::fixtures;

fn main() {
    let vocab = fixtures::vocabulary();
    let order = ["ICD10CM", "ICD10", "ICD9CM"];
    for code in ["I63.9", "E11.9", "W19.XXXA", "U99.9"] {
        let m = vocab.to_cdm(code, &order);
        println!(
            "{code:<10} source {:>9} standard {:>9} via {:<8} {:?}",
            m.source_concept_id,
            m.standard_concept_id,
            m.resolved_vocabulary.as_deref().unwrap_or("-"),
            m.status
        );
    }
    let eth = fixtures::rule_set("ethnicity");
    for v in ["HISPANIC OR LATINO", "NOT HISPANIC OR LATINO", "UNKNOWN"] {
        println!("ethnicity {v:?} -> {}", eth.apply(v));
    }
}

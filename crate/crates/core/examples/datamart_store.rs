//! Typed records in and out of the CSV-backed datamart.

use caremart::store::{Datamart, Namespace, Person};

fn main() -> caremart::Result<()> {
    let dir = std::env::temp_dir().join("caremart-example-store");
    let mut mart = Datamart::open(&dir)?;
    mart.replace([1, 2, 3].map(|id| Person {
        person_id: id,
        gender_concept_id: if id % 2 == 0 { 8532 } else { 8507 },
        year_of_birth: 1950 + id,
        month_of_birth: 1,
        day_of_birth: 1,
        race_concept_id: 0,
        ethnicity_concept_id: 0,
        gender_source_value: String::new(),
        race_source_value: String::new(),
        ethnicity_source_value: String::new(),
    }))?;
    mart.save_table(Namespace::Cdm, "person")?;

    let reopened = Datamart::open(&dir)?;
    let people: Vec<Person> = reopened.records()?;
    println!("{} persons in {}", people.len(), dir.join("cdm/person.csv").display());
    for t in reopened.registry().tables(Namespace::Cdm) {
        println!(
            "cdm.{:<22} {} rows",
            t.name,
            reopened.row_count(Namespace::Cdm, t.name)?
        );
    }
    Ok(())
}

//! From raw annotator votes to labels and disagreement scores.

use comod::annotations::{build_labeled, AnnotationRecord, DisagreementMethod};

fn main() -> comod::Result<()> {
    let comments = [
        ("unanimous", vec![1; 10]),
        ("split", vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0]),
        ("leaning", vec![1, 1, 0, 0, 0, 0, 0, 0, 0, 0]),
        ("tie breaks toxic", vec![1, 0]),
    ];
    println!("{:<18} {:>8} {:>6} {:>9} {:>8}", "comment", "label", "mean", "distance", "entropy");
    for (id, votes) in comments {
        let r = AnnotationRecord::new(id, votes);
        let dist = build_labeled(&r, DisagreementMethod::Distance)?;
        let ent = build_labeled(&r, DisagreementMethod::Entropy)?;
        println!(
            "{:<18} {:>8} {:>6.2} {:>9.3} {:>8.3}",
            id,
            dist.y.name(),
            dist.a_mean,
            dist.d,
            ent.d
        );
    }
    Ok(())
}

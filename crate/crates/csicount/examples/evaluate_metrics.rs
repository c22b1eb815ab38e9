//! Evaluation metrics: per-class precision/recall/F1, occupancy MAE/RMSE,
//! and the generalisation index comparing source and target deployments.

use csicount::metrics::{classification_metrics, counting_errors, generalisation_index};
use csicount::EventLabel::{Enter, Exit, NoEvent};

fn main() -> csicount::Result<()> {
    let labels = vec![
        NoEvent, NoEvent, Enter, Enter, NoEvent, Exit, NoEvent, Enter, Exit, NoEvent,
    ];
    let preds = vec![
        NoEvent, NoEvent, Enter, NoEvent, NoEvent, Exit, NoEvent, Enter, Exit, Enter,
    ];
    let report = classification_metrics(&preds, &labels)?;
    println!("{}", report.to_table());

    let estimates = [1, 2, 2, 0, 3];
    let truth = [1, 2, 3, 0, 3];
    let (mae, rmse) = counting_errors(&estimates, &truth)?;
    println!("occupancy mae {mae:.3}, rmse {rmse:.3}\n");

    // a model that transfers well: target metrics close to source metrics
    let mut source = report.clone();
    source.accuracy = 0.96;
    source.mae = 4.37;
    let mut target = report.clone();
    target.accuracy = 0.998;
    target.mae = 0.07;
    let (gi_acc, gi_mae) = generalisation_index(&source, &target);
    println!("generalisation index: accuracy ratio {gi_acc:.3}, mae ratio {gi_mae:.1}");
    println!("(identical reports give exactly (1.000, 1.0))");
    Ok(())
}

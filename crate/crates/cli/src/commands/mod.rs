pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod train;

use crate::{CmdError, DataArgs};
use rnp_core::data::{load_csv, CsvSchema, DataError, TimeSeries};

pub fn schema_from_args(args: &DataArgs) -> Result<CsvSchema, CmdError> {
    let delim = args.delimiter.as_bytes();
    if delim.len() != 1 {
        return Err(CmdError::Usage(format!(
            "delimiter must be a single byte, got {:?}",
            args.delimiter
        )));
    }
    Ok(CsvSchema {
        target_column: args.target_column.clone(),
        input_columns: args.input_columns.clone(),
        has_header: !args.no_header,
        delimiter: delim[0],
        row_limit: args.row_limit,
    })
}

pub fn splits_from_args(args: &DataArgs) -> Result<(f64, f64, f64), CmdError> {
    if args.splits.len() != 3 {
        return Err(CmdError::Usage(format!(
            "--splits needs three fractions, got {}",
            args.splits.len()
        )));
    }
    Ok((args.splits[0], args.splits[1], args.splits[2]))
}

pub fn load_series(args: &DataArgs) -> Result<(TimeSeries, CsvSchema, usize), CmdError> {
    let schema = schema_from_args(args)?;
    let (series, dropped) = load_csv(&args.data, &schema).map_err(|e| match e {
        DataError::UnknownColumn(_) | DataError::Invalid(_) => CmdError::Usage(e.to_string()),
        other => CmdError::Runtime(other.to_string()),
    })?;
    if dropped > 0 {
        eprintln!("warning: dropped {} malformed rows", dropped);
    }
    Ok((series, schema, dropped))
}

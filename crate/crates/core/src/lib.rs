//! Evidential production assessment.
//!
//! Expert knowledge captured in an extended-FMEA workbook becomes a set of
//! mutually exclusive boolean rules over process variables. When a rule
//! fires, its confidence weight (expert panel, KPI compliance and user
//! rating) is folded into a weighted Dempster-Shafer evidence vector with an
//! explicit overall uncertainty, and the operator is walked through the
//! matching cause/recommendation pairs.
//!
//! | module | role |
//! |---|---|
//! | [`evidence`] | sensitivity-to-zero mass spreading, weighted uncertainty |
//! | [`ruledsl`] | rule language parser, type checker, evaluator, exclusivity check |
//! | [`fmea`] | CSV workbook model and loader |
//! | [`weights`] | member, panel, KPI, rating and rule confidence weights |
//! | [`knowledge`] | first-match rule dispatch and assessment assembly |
//! | [`kpi`] | production rate, moving averages, recipe validation, one-way ANOVA |
//! | [`bgsim`] | seeded bulk-good plant simulator with fault injection |
//! | [`backend`] | operator session state machine, event log, pub/sub and HTTP |
//! | [`cli`] | the `klafate` command line |
//!
//! Runnable walkthroughs live in `examples/`; see the README for the list.

pub mod backend;
pub mod bgsim;
pub mod cli;
pub mod evidence;
pub mod fmea;
pub mod knowledge;
pub mod kpi;
pub mod ruledsl;
pub mod weights;

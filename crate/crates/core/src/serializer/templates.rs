//! Normative English templates. Changing any of these changes every prompt and
//! target byte-for-byte; FORMATS.md at the repository root documents them.

pub const SYSTEM_PROMPT: &str = "As a specialist predictive model in personalized medicine, your task is to forecast the health trajectory of cancer patients by integrating genomic data, lifestyle factors, treatment history and anything else provided about the patient. Use the provided patient data, including genetic mutations, biomarker levels, and previous treatment responses, to predict all requested tasks. Deliver precise and clinically relevant predictions to enhance patient care and treatment planning.";

pub const PATIENT_INTRO: &str = "The following is a patient, starting with the demographic data, following visit by visit everything that the patient experienced. All lab codes refer to LOINC codes.";

pub const DEMOGRAPHICS_HEADER: &str = "Starting with demographic data:";

pub const FIRST_VISIT_HEADER: &str = "On the first visit, the patient experienced the following: ";

pub const GENETIC_RECAP_HEADER: &str =
    "Here we repeat the last observed values of each genetic event in the input data:";

pub const LATEST_LINE_HEADER: &str = "The most recent line of therapy:";

pub const LAST_VALUES_HEADER: &str = "The last values of the variables in the input data are:";

pub const TASK_PREAMBLE: &str = "You will now have multiple tasks to complete. Please answer for each task in the same order as they are presented. Before every response state the task nr, e.g. 'Task 2:'.";

pub const FORECAST_INSTRUCTION: &str = "Your task is to predict the future values of the following variables for each cumulative week starting from the last visit:";

pub const BUCKET_INSTRUCTION: &str = "Your task is to predict which of 5 equally numbered quintiles (1 is the lowest, 5 is the highest) the values of the following variables fall into, for each cumulative week starting from the last visit:";

pub const EVENT_FORMAT_INSTRUCTION: &str = "Please provide your prediction in the following format: 'Here is the prediction: the event (<name of event>) was [not] censored and [did not occur]/[occurred].'";

/// Rendering of a present/absent item.
pub const MARKER_WORDING: &str = "diagnosed";

pub fn visit_header(weeks_later: u32) -> String {
    format!("{weeks_later} weeks later, the patient visited and experienced the following: ")
}

pub fn forecast_task_header(id: usize) -> String {
    format!("Task {id} is forecasting:")
}

pub fn bucket_task_header(id: usize) -> String {
    format!("Task {id} is quintile forecasting:")
}

pub fn event_task_header(id: usize) -> String {
    format!("Task {id} is time to event prediction:")
}

pub fn event_instruction(horizon: u32, event: &str) -> String {
    format!(
        "Your task is to predict whether the following event was censored {horizon} weeks from the last clinical visit and whether the event occurred or not: {event}."
    )
}

pub fn forecast_request_line(variable: &str, weeks: &[u32]) -> String {
    let weeks: Vec<String> = weeks.iter().map(u32::to_string).collect();
    format!("\t{variable} the future weeks {}", weeks.join(", "))
}

pub const ANSWER_OCCURRED: &str = "was not censored and occurred.";
pub const ANSWER_NOT_OCCURRED: &str = "was not censored and did not occur.";
pub const ANSWER_CENSORED: &str = "was censored and did not occur.";

pub fn event_answer(event: &str, outcome: &str) -> String {
    format!("Here is the prediction: the event ({event}) {outcome}")
}

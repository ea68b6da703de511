//! Prompt templates.
//!
//! Each builder splices its placeholders into the fixed template text and
//! nothing else: no trimming, no re-wrapping. The golden files under
//! `tests/golden/prompts/` pin the exact bytes.

/// Functional semantics, abstract purpose. The code comes first.
pub const PURPOSE_QUESTION: &str = "What is the purpose of the function in the above code snippet? \
Please summarize the answer in one sentence with the following format: \"Function purpose:\".";

/// Functional semantics, detailed behavior. The code comes first.
pub const BEHAVIOR_QUESTION: &str = "Please summarize the functions of the above code snippet in the list format \
without any other explanation: \"The functions of the code snippet are: 1. 2. 3...\"";

pub const PURPOSE_LABEL: &str = "Function purpose:";
pub const BEHAVIOR_LABEL: &str = "The functions of the code snippet are:";

pub fn purpose(code: &str) -> String {
    format!("{code} {PURPOSE_QUESTION}")
}

pub fn behavior(code: &str) -> String {
    format!("{code} {BEHAVIOR_QUESTION}")
}

/// First extraction round: ask the model to explain the fix.
pub fn extraction_round1(cve_id: &str, vulnerable_code: &str, cve_description: &str, patch_diff: &str, patched_code: &str) -> String {
    format!(
        "This is a code snippet with a vulnerability {cve_id}:\n\
         {vulnerable_code}\n\
         The vulnerability is described as follows:{cve_description}\n\
         The correct way to fix it is by {patch_diff}\n\
         The code after modification is as follows: {patched_code}\n\
         Why is the above modification necessary?"
    )
}

/// Second extraction round, sent after the round-1 exchange. Each example is
/// one rendered demonstration record.
pub fn extraction_round2(example1: &str, example2: &str) -> String {
    format!(
        "I want you to act as a vulnerability detection expert and organize vulnerability knowledge based on the above \
         vulnerability repair information. Please summarize the generalizable specific behavior of the code that leads \
         to the vulnerability and the specific solution to fix it. Format your findings in JSON.\n\
         Here are some examples to guide you on the level of detail expected in your extraction:\n\
         {example1}\n\
         {example2}"
    )
}

/// Sent after a structured answer failed to parse.
pub const FORMAT_REMINDER: &str = "Your previous answer could not be parsed. Reply with exactly one JSON object \
with the string keys \"triggering_action\", \"abstract_description\", \"detailed_description\" and \"solution\", \
and nothing else.";

const ABSTRACTION_PREAMBLE: &str = "With the detailed vulnerability knowledge extracted from the previous stage, your \
task is to abstract and generalize this knowledge to enhance its applicability across different scenarios. Please \
adhere to the following guidelines and examples provided:";

/// Knowledge abstraction. `guidelines` is the editable guideline text,
/// `knowledge` the rendered causes and fix to rewrite.
pub fn abstraction(guidelines: &str, knowledge: &str) -> String {
    format!(
        "{ABSTRACTION_PREAMBLE}\n\n\
         {guidelines}\n\
         ### Vulnerability Knowledge:\n\
         {knowledge}\n\n\
         Return the abstracted knowledge as one JSON object with the same keys."
    )
}

/// Does the code exhibit the knowledge item's vulnerability cause?
pub fn find_cause(code: &str, knowledge: &str) -> String {
    format!(
        "Given the following code and related vulnerability causes, please detect if there is a vulnerability caused \
         in the code. {code}. In a similar code scenario, the following vulnerabilities have been found: {knowledge}. \
         Please use your own knowledge of vulnerabilities and the above vulnerability knowledge to detect whether there \
         is a vulnerability in the code."
    )
}

/// Does the code already contain the knowledge item's fixing solution?
pub fn find_fix(code: &str, knowledge: &str) -> String {
    format!(
        "Given the following code and related vulnerability fixing solutions, please detect if there is a \
         vulnerability in the code. {code}. In a similar code scenario, the following vulnerabilities have been found: \
         {knowledge}. Please use your own knowledge of vulnerabilities and the above vulnerability knowledge to detect \
         whether there is a corresponding fixing solution in the code."
    )
}

pub const COMBINED_ANSWER_FORMAT: &str = "Answer both questions, each on its own line: \"Cause: YES or NO\" \
(does the code exhibit the vulnerability cause?) and \"Fix: YES or NO\" (does the code contain the fixing solution?).";

/// Single-call variant of the cause/fix pair.
pub fn find_cause_and_fix(code: &str, knowledge: &str) -> String {
    format!("{}\n{COMBINED_ANSWER_FORMAT}", find_cause(code, knowledge))
}

pub fn basic(code: &str) -> String {
    format!("Is this code vulnerable? Answer in Yes or No.\n\n### Code Snippet: \n{code}.")
}

pub fn cot1(code: &str) -> String {
    format!(
        "I want you to act as a vulnerability detection expert. Initially, you need to explain the behavior of the \
         code. Subsequently, you need to determine whether the code is vulnerable. Answer in YES or NO.\n\n\
         ### Code Snippet: \n{code}."
    )
}

pub fn cot2(code: &str) -> String {
    format!(
        "I want you to act as a vulnerability detection system. Initially, you need to explain the behavior of the \
         given code. Subsequently, analyze whether there are potential root causes that could result in \
         vulnerabilities. Based on above analysis, determine whether the code is vulnerable, and conclude your answer \
         with either YES or NO.\n\n\
         ### Code Snippet: \n{code}."
    )
}

pub fn cwe_enhanced(code: &str, cwe_description: &str) -> String {
    format!(
        "I want you to act as a vulnerability detection system. I will provide you with a code snippet and a CWE \
         description. Please analyze the code to determine if it contains the vulnerability described in the CWE. \
         Answer in YES or NO.\n\n\
         ### Code Snippet: \n{code}.\n\n\
         ### CWE Description: {cwe_description}"
    )
}

/// Code-level RAG baseline: the most similar training pair is shown before
/// the code under analysis.
pub fn code_rag(code: &str, similar_cve: &str, similar_vulnerable: &str, similar_patched: Option<&str>) -> String {
    let mut s = format!(
        "I want you to act as a vulnerability detection system. The following code is taken from a known \
         vulnerability that is similar to the code under analysis.\n\n\
         ### Similar Vulnerable Code ({similar_cve}): \n{similar_vulnerable}\n\n"
    );
    if let Some(p) = similar_patched {
        s.push_str(&format!("### Similar Code After The Fix: \n{p}\n\n"));
    }
    s.push_str(&basic(code));
    s
}

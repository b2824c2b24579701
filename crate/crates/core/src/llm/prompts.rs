//! Prompt templates. Placeholders are `{name}`; `{{` and `}}` produce literal braces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{LlmError, Message, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Planner,
    Replanner,
    Decision,
    Text2sql,
    TextAnalysis,
    IntentTables,
    DataPreparation,
    DataPlotting,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::Planner,
        TemplateId::Replanner,
        TemplateId::Decision,
        TemplateId::Text2sql,
        TemplateId::TextAnalysis,
        TemplateId::IntentTables,
        TemplateId::DataPreparation,
        TemplateId::DataPlotting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Planner => "planner",
            TemplateId::Replanner => "replanner",
            TemplateId::Decision => "decision",
            TemplateId::Text2sql => "text2sql",
            TemplateId::TextAnalysis => "text_analysis",
            TemplateId::IntentTables => "intent_tables",
            TemplateId::DataPreparation => "data_preparation",
            TemplateId::DataPlotting => "data_plotting",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template '{s}'"))
    }
}

pub type Vars = BTreeMap<String, String>;

#[derive(Debug, Clone)]
pub struct Template {
    pub messages: Vec<(Role, String)>,
}

impl Template {
    fn new(messages: &[(Role, &str)]) -> Self {
        Self {
            messages: messages.iter().map(|(r, t)| (*r, t.to_string())).collect(),
        }
    }

    /// Every placeholder name used by the template.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (_, text) in &self.messages {
            for piece in scan(text) {
                if let Piece::Var(name) = piece {
                    out.insert(name.to_string());
                }
            }
        }
        out
    }

    pub fn render(&self, vars: &Vars) -> Result<Vec<Message>, LlmError> {
        self.messages
            .iter()
            .map(|(role, text)| {
                substitute(text, vars).map(|content| Message { role: *role, content })
            })
            .collect()
    }
}

fn substitute(text: &str, vars: &Vars) -> Result<String, LlmError> {
    let mut out = String::with_capacity(text.len());
    for piece in scan(text) {
        match piece {
            Piece::Lit(s) => out.push_str(s),
            Piece::Var(name) => match vars.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(LlmError::MissingVariable(name.to_string())),
            },
        }
    }
    Ok(out)
}

enum Piece<'a> {
    Lit(&'a str),
    Var(&'a str),
}

/// Splits `text` into literal runs and placeholder names. A `{` that does not
/// start a well-formed `{identifier}` is literal.
fn scan(text: &str) -> Vec<Piece<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut start = 0;
    while i < bytes.len() {
        let doubled = matches!(bytes[i], b'{' | b'}') && bytes.get(i + 1) == Some(&bytes[i]);
        if doubled {
            out.push(Piece::Lit(&text[start..i]));
            out.push(Piece::Lit(&text[i..i + 1]));
            i += 2;
            start = i;
            continue;
        }
        if bytes[i] == b'{' {
            let end = text[i + 1..].find('}').map(|e| i + 1 + e).filter(|&e| {
                let name = &text[i + 1..e];
                !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
            });
            if let Some(e) = end {
                out.push(Piece::Lit(&text[start..i]));
                out.push(Piece::Var(&text[i + 1..e]));
                i = e + 1;
                start = i;
                continue;
            }
        }
        i += 1;
    }
    out.push(Piece::Lit(&text[start..]));
    out
}

/// The fixed set of prompts used by the engine.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<TemplateId, Template>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        use Role::{System, User};
        let mut templates = BTreeMap::new();
        templates.insert(
            TemplateId::Planner,
            Template::new(&[(System, PLANNER_SYSTEM), (User, "{state}"), (System, PLAN_REMINDER)]),
        );
        templates.insert(
            TemplateId::Replanner,
            Template::new(&[(System, REPLANNER_SYSTEM), (User, REPLANNER_USER), (System, PLAN_REMINDER)]),
        );
        templates.insert(
            TemplateId::Decision,
            Template::new(&[(System, DECISION_SYSTEM), (User, "{state}"), (System, DECISION_CLOSING)]),
        );
        templates.insert(
            TemplateId::Text2sql,
            Template::new(&[(System, TEXT2SQL_SYSTEM), (User, TEXT2SQL_USER), (System, TEXT2SQL_FORMAT)]),
        );
        templates.insert(
            TemplateId::TextAnalysis,
            Template::new(&[(System, TEXT_ANALYSIS_SYSTEM), (User, TASK_WITH_INPUT_USER)]),
        );
        templates.insert(
            TemplateId::IntentTables,
            Template::new(&[(System, INTENT_TABLES_SYSTEM), (User, INTENT_TABLES_USER)]),
        );
        templates.insert(
            TemplateId::DataPreparation,
            Template::new(&[
                (System, DATA_PREPARATION_SYSTEM),
                (User, TASK_WITH_INPUT_USER),
                (System, "{output_format}"),
            ]),
        );
        templates.insert(
            TemplateId::DataPlotting,
            Template::new(&[
                (System, DATA_PLOTTING_SYSTEM),
                (User, TASK_WITH_INPUT_USER),
                (System, "{output_format}"),
            ]),
        );
        Self { templates }
    }
}

impl PromptLibrary {
    pub fn template(&self, id: TemplateId) -> &Template {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, vars: &Vars) -> Result<Vec<Message>, LlmError> {
        self.template(id).render(vars)
    }
}

pub const PLANNER_SYSTEM: &str = "Given a user question and a database schema, analyze the question to identify and break it down into relevant sub-questions.

Determine which tools (e.g., {tool_names}) are appropriate for answering each sub-question based on the available database information and tools.

Decompose the user question into sub-questions that capture all elements of the question’s intent. This includes identifying the main objective, relevant sub-questions, necessary background information, assumptions, and any secondary requirements.

Ensure that no part of the original question’s intent is omitted, and create a list of individual steps to answer the question fully and accurately using tools.

You may need to use one tool multiple times to answer the original question.

First, you should begin by thoroughly analyzing the user's main question. It’s important to understand the key components and objectives within the query.

Next, you must review the provided database schema. This involves examining the tables, fields, and relationships within the database to identify which parts of the schema are relevant to the user’s question and contribute to a set of sub-questions.

For each sub-question, provide all the required information that may required in other tasks. In order to find this information look at the user question and the database information.

Each sub-question or step should focus exclusively on a single task.

Each sub-question should be a textual question. Don't generate a code as a sub-question.

Create a plan to solve it with the utmost parallelizability.

Each plan should comprise an action from the following {num_tools} types:

{tool_descriptions}

{num_tools}. join(): Collects and combines results from prior actions.

 - An LLM agent is called upon invoking join() to either finalize the user query or wait until the plans are executed.
 - join should always be the last action in the plan, and will be called in two scenarios:
   (a) if the answer can be determined by gathering the outputs from tasks to generate the final response.
   (b) if the answer cannot be determined in the planning phase before you execute the plans. Guidelines:
 - Each action described above contains input/output types and descriptions.
 - You must strictly adhere to the input and output types for each action.
 - The action descriptions contain the guidelines. You MUST strictly follow those guidelines when you use the actions.
 - Each action in the plan should strictly be one of the above types. Follow the Python conventions for each action.
 - Each action MUST have a unique ID, which is strictly increasing.
 - Inputs for actions can either be constants or outputs from preceding actions. In the latter case, use the format $id to denote the ID of the previous action whose output will be the input.
 - If there is an input from preceding actions, always point its id as `$id` in the context of the action
 - Always call join as the last action in the plan. Say '<END_OF_PLAN>' after you call join.
 - Ensure the plan maximizes parallelizability.
 - Only use the provided action types. If a query cannot be addressed using these, invoke the join action for the next steps.
 - Never introduce new actions other than the ones provided.

{business_rules}";

pub const PLAN_REMINDER: &str =
    "Remember, ONLY respond with the task list in the correct format! E.g.: idx. tool(arg_name=args),";

pub const REPLANNER_SYSTEM: &str = "A plan for the user question below was executed, but its results were not sufficient. Create a new plan that obtains only the missing information. Results of completed tasks are kept: refer to them as $id and do not repeat those tasks. Number new tasks starting from {next_id}.

Each plan should comprise an action from the following {num_tools} types:

{tool_descriptions}

{num_tools}. join(): Collects and combines results from prior actions.

 - Each action MUST have a unique ID, which is strictly increasing.
 - Inputs for actions can either be constants or outputs from preceding actions. In the latter case, use the format $id to denote the ID of the previous action whose output will be the input.
 - Always call join as the last action in the plan. Say '<END_OF_PLAN>' after you call join.
 - Never introduce new actions other than the ones provided.";

pub const REPLANNER_USER: &str = "Question: {question}

Previous plan:
{previous_plan}

Completed tasks:
{kept_results}

Reason for replanning:
{reason}";

pub const DECISION_SYSTEM: &str = "Solve a question answering task. Here are some guidelines:

- In the Assistant Scratchpad, you will be given results of a plan you have executed to answer the user's question.
    - Thought needs to reason about the question based on the Observations in 1-2 sentences.
    - Ignore irrelevant action results.
    - If the required information is present, give a concise but complete and helpful answer to the user's question.
    - If you are unable to give a satisfactory finishing answer, replan to get the required information. Respond in the following format:

    Thought: <reason about the task results and whether you have sufficient information to answer the question>
    Action: <action to take>

    - If an error occurs during previous actions, replan and take corrective measures to obtain the required information.
    - Ensure that you consider errors in all the previous steps, and try to replan accordingly.
    - Ensure the final answer is provided in a structured format as JSON as follows:
        {{'Summary': <concise summary of the answer>,
         'details': <detailed explanation and supporting information>,
         'source': <source of the information or how it was obtained>,
         'inference':<your final inference as YES, No, or list of requested information without any extra information which you can take from the `labels` as given below>,
         'extra explanation':<put here the extra information that you don't provide in inference >,
         }}
         In the `inference` do not provide additional explanation or description. Put them in `extra explanation`.

    Available actions:
    (1) Finish (the final answer to return to the user): returns the answer and finishes the task.
    (2) Replan(the reasoning and other information that will help you plan again. Can be a line of any length): instructs why we must replan.";

pub const DECISION_CLOSING: &str = "Using the above previous actions, decide whether to replan or finish.
    If all the required information is present, you may finish. Consider replanning for data_preparation task if you want to structure the response in a proper way.
    If you have made many attempts to find the information without success, admit so and respond with whatever information you have gathered so the user can work well with you.
    Do not generate a response based on the sample data (assumption). If you failed after multiple attempts, you can finish and explain the reason.";

pub const TEXT2SQL_SYSTEM: &str = "You are a database expert. Generate a SQL query given the following user question, database information and other context that you receive.
You should analyse the question, context and database schema and come up with the executable sqlite3 query.

Provide all the required information in the SQL code to answer the original user question that may required in other tasks utilizing the relevant database schema.

Ensure you include all necessary information, including columns used for filtering, especially when the task involves plotting or data exploration.

This must be taken into account when performing any time-based data queries or analyses.

Translate a text question into a SQL query that can be executed on the SQLite database.

You should stick to the available schema including tables and columns in the database and should not bring any new tables or columns.";

pub const TEXT2SQL_USER: &str = "{problem}
{context}
Database schema:
{schema}{feedback}";

pub const TEXT2SQL_FORMAT: &str =
    "Respond with {{\"reasoning\": \"...\", \"SQL\": \"...\"}} and nothing else.";

pub const TEXT_ANALYSIS_SYSTEM: &str = "You are a text analysis assistant.
Analyze the provided question and report to answer the question.

Only answer the question and don't provide extra information in your answer.

In your answer, be concrete and use None if you can't find the answer in the report.

The output should be in the format: {{'reasoning': '...', 'answer': '...'}}";

pub const TASK_WITH_INPUT_USER: &str = "{question}

{input}{feedback}";

pub const INTENT_TABLES_SYSTEM: &str = "You are a database expert. Given a user question and a database schema, select the tables needed to answer the question. Respond with a JSON list of table names only.";

pub const INTENT_TABLES_USER: &str = "{problem}
{context}
Database schema:
{schema}";

pub const DATA_PREPARATION_SYSTEM: &str = "You are a data preparation and processing assistant. Create a proper structure for the provided data from the previous steps to answer the request.

- If the required information has not found in the provided data, ask for replanning and ask from previous tools to include the missing information.

- You should include all the input data in the code, and prevent of ignoring them by  `# ... (rest of the data)`.

- You should provide a name or caption for each value in the final output considering the question and the input context.\"

- Don't create any sample data in order to answer to the user question.

- You should print the final data structure.

- You should save the final data structure at the specified path with a proper filename.

- You should output the final data structure as a final output.";

pub const DATA_PLOTTING_SYSTEM: &str = "You are a data plotting assistant. Plot the provided data from the previous steps to answer the question.

- Analyze the user's request and input data to determine the most suitable type of visualization/plot that also can be understood by the simple user.

- If the required information has not been found in the provided data, ask for replanning and ask from previous tools to include the missing information.

- Don't create any sample data in order to answer to the user question.

- You should save the generated plot at the specified path with the proper filename and .png extension.";

#[cfg(test)]
mod tests {
    use super::*;

    fn full_vars(id: TemplateId, lib: &PromptLibrary) -> Vars {
        lib.template(id)
            .placeholders()
            .into_iter()
            .map(|p| (p.clone(), format!("<{p}>")))
            .collect()
    }

    #[test]
    fn complete_vars_leave_no_placeholder() {
        let lib = PromptLibrary::default();
        for id in TemplateId::ALL {
            let vars = full_vars(id, &lib);
            let rendered = lib.render(id, &vars).unwrap();
            for m in &rendered {
                let leftover: Vec<&str> = scan(&m.content)
                    .into_iter()
                    .filter_map(|p| match p {
                        Piece::Var(n) => Some(n),
                        Piece::Lit(_) => None,
                    })
                    .collect();
                assert!(leftover.is_empty(), "{id}: unresolved {leftover:?}");
            }
        }
    }

    #[test]
    fn missing_variable_is_named() {
        let lib = PromptLibrary::default();
        let mut vars = full_vars(TemplateId::Planner, &lib);
        vars.remove("tool_descriptions");
        match lib.render(TemplateId::Planner, &vars) {
            Err(LlmError::MissingVariable(name)) => assert_eq!(name, "tool_descriptions"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn planner_guidelines_survive_rendering() {
        let lib = PromptLibrary::default();
        let mut vars = full_vars(TemplateId::Planner, &lib);
        vars.insert("tool_names".into(), "text2SQL, image_analysis, join".into());
        vars.insert("num_tools".into(), "3".into());
        let msgs = lib.render(TemplateId::Planner, &vars).unwrap();
        assert_eq!(msgs.iter().map(|m| m.role).collect::<Vec<_>>(), vec![Role::System, Role::User, Role::System]);
        let system = &msgs[0].content;
        for needle in [
            "Create a plan to solve it with the utmost parallelizability.",
            "Determine which tools (e.g., text2SQL, image_analysis, join) are appropriate",
            "Each action MUST have a unique ID, which is strictly increasing.",
            "use the format $id to denote the ID of the previous action",
            "Always call join as the last action in the plan. Say '<END_OF_PLAN>' after you call join.",
            "3. join(): Collects and combines results from prior actions.",
        ] {
            assert!(system.contains(needle), "missing {needle:?}");
        }
        assert!(msgs[2].content.starts_with("Remember, ONLY respond with the task list"));
    }

    #[test]
    fn decision_prompt_shape() {
        let lib = PromptLibrary::default();
        let mut vars = Vars::new();
        vars.insert("state".into(), "Question: q".into());
        let msgs = lib.render(TemplateId::Decision, &vars).unwrap();
        assert!(msgs[0].content.contains("{'Summary': <concise summary of the answer>,"));
        assert!(msgs[0].content.contains("(1) Finish (the final answer to return to the user)"));
        assert_eq!(msgs[1].content, "Question: q");
        assert!(msgs[2].content.starts_with("Using the above previous actions, decide whether to replan or finish."));
    }

    #[test]
    fn tool_prompts_keep_their_guidelines() {
        let lib = PromptLibrary::default();
        let checks = [
            (TemplateId::Text2sql, "come up with the executable sqlite3 query"),
            (TemplateId::Text2sql, "should not bring any new tables or columns"),
            (TemplateId::TextAnalysis, "use None if you can't find the answer in the report"),
            (TemplateId::TextAnalysis, "{'reasoning': '...', 'answer': '...'}"),
            (TemplateId::DataPreparation, "save the final data structure at the specified path"),
            (TemplateId::DataPlotting, "proper filename and .png extension"),
        ];
        for (id, needle) in checks {
            let msgs = lib.render(id, &full_vars(id, &lib)).unwrap();
            assert!(msgs[0].content.contains(needle), "{id}: missing {needle:?}");
        }
    }

    #[test]
    fn literal_braces_and_non_identifiers() {
        let t = Template::new(&[(Role::User, "{{x}} {a b} {} {y}")]);
        let mut vars = Vars::new();
        vars.insert("y".into(), "Y".into());
        assert_eq!(t.render(&vars).unwrap()[0].content, "{x} {a b} {} Y");
        assert_eq!(t.placeholders().into_iter().collect::<Vec<_>>(), vec!["y".to_string()]);
    }
}

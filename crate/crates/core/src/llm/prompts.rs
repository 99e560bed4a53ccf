use std::fmt::Write as _;

use crate::datamodel::TopicDescription;

pub(crate) const TOPIC_MARKER: &str = "Topic information:";
pub(crate) const TURNS_MARKER: &str = "Number of turns:";
pub(crate) const QUERY_MARKER: &str = "Input query:";

/// `[Instruction, Topic Information]` prompt asking for a whole session at once.
pub fn render_dialogue_prompt(topic: &TopicDescription, n_turns: usize) -> String {
    let mut p = String::new();
    p.push_str(
        "Instruction: You are simulating an information-seeking conversation between a user \
         and a search system. Using the topic information below, write the entire conversation \
         session in one pass. ",
    );
    if n_turns <= 1 {
        p.push_str(
            "The session has exactly 1 turn: a single user query followed by its answer. \
             Write the query on a line starting with \"Q1:\" and the answer on a line starting \
             with \"A1:\".",
        );
    } else {
        let _ = write!(
            p,
            "The session has exactly {n_turns} turns. Each turn is a user query followed by a \
             short answer. Later queries must build on earlier turns the way people naturally \
             talk: refer back with pronouns such as \"it\" or \"they\" and omit things that were \
             already mentioned. Write every turn as a \"Q<i>:\" line followed by an \"A<i>:\" \
             line, from Q1/A1 to Q{n_turns}/A{n_turns}."
        );
    }
    p.push_str(" Do not add any other text.\n");
    let _ = writeln!(p, "{TURNS_MARKER} {}", n_turns.max(1));
    p.push_str("Output format:\n");
    for i in 1..=n_turns.max(1) {
        let _ = writeln!(p, "Q{i}: <query {i}>");
        let _ = writeln!(p, "A{i}: <answer {i}>");
    }
    let _ = writeln!(p, "{TOPIC_MARKER}");
    if !topic.title.trim().is_empty() {
        let _ = writeln!(p, "Title: {}", topic.title);
    }
    let _ = write!(p, "Description: {}", topic.description);
    p
}

/// `[Instruction, Input Query]` prompt asking for one same-meaning paraphrase.
pub fn render_rewrite_prompt(query: &str) -> String {
    format!(
        "Instruction: Rewrite the search query below into one alternative natural language \
         expression with the same meaning. Do not answer it. Reply with the rewritten query \
         only.\n{QUERY_MARKER} {query}"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topic(desc: &str) -> TopicDescription {
        TopicDescription {
            topic_id: "t".into(),
            title: String::new(),
            description: desc.into(),
        }
    }

    #[test]
    fn dialogue_prompt_lists_markers_and_topic() {
        let p = render_dialogue_prompt(&topic("animals"), 3);
        for m in ["Q1:", "A1:", "Q2:", "A2:", "Q3:", "A3:"] {
            assert!(p.contains(m), "missing {m}");
        }
        assert!(!p.contains("Q4:"));
        assert!(p.contains("animals"));
        assert!(p.contains("exactly 3 turns"));
    }

    #[test]
    fn single_turn_prompt() {
        let p = render_dialogue_prompt(&topic("animals"), 1);
        assert!(p.contains("exactly 1 turn:"));
        assert!(p.contains("Q1:") && p.contains("A1:") && !p.contains("Q2:"));
    }

    #[test]
    fn prompts_are_byte_stable() {
        let t = TopicDescription {
            topic_id: "x".into(),
            title: "Throat cancer".into(),
            description: "Symptoms & treatment of throat cancer.".into(),
        };
        assert_eq!(render_dialogue_prompt(&t, 4), render_dialogue_prompt(&t, 4));
        assert!(render_dialogue_prompt(&t, 4).contains("Symptoms & treatment of throat cancer."));
        assert_eq!(render_rewrite_prompt("is it curable?"), render_rewrite_prompt("is it curable?"));
    }

    #[test]
    fn rewrite_prompt_embeds_query_verbatim() {
        let q = "What's the  5-year survival?";
        let p = render_rewrite_prompt(q);
        assert!(p.contains(q));
        assert!(p.contains("same meaning"));
        assert!(p.contains("one alternative"));
    }
}

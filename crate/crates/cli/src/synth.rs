//! Seeded synthetic corpora with recorded ground truth for every downstream
//! evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use forge_core::corpus::{write_jsonl, Category, Document, Modality};
use forge_core::evalset::{annotate_code, AnnotatedDoc, Annotation};
use forge_core::filter::{LabeledSeed, Relevance};
use forge_core::ingest::tokenize;
use forge_core::masking::EvalCategory;
use forge_core::metrics::Qrels;
use forge_core::retrieval::write_qrels;
use forge_core::seed::{stream_rng, Rng};
use forge_core::{ForgeError, Result};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------- word pools

/// Verb with the objects it takes.
const FRAMES: &[(&str, &[&str])] = &[
    ("encrypts", &["files", "databases", "backups", "archives", "volumes"]),
    ("steals", &["credentials", "passwords", "cookies", "tokens", "keys"]),
    ("injects", &["payload", "script", "shellcode", "macro", "library"]),
    ("downloads", &["loader", "dropper", "implant", "update", "module"]),
    ("scans", &["network", "ports", "hosts", "subnet", "services"]),
    ("exfiltrates", &["data", "documents", "emails", "records", "contacts"]),
    ("bypasses", &["firewall", "sandbox", "authentication", "filter", "antivirus"]),
    ("disables", &["logging", "defender", "monitoring", "telemetry", "alerts"]),
    ("exploits", &["vulnerability", "flaw", "weakness", "bug", "misconfiguration"]),
    ("deploys", &["ransomware", "backdoor", "miner", "webshell", "beacon"]),
    ("patches", &["kernel", "driver", "firmware", "browser", "plugin"]),
    ("detects", &["intrusion", "anomaly", "malware", "beaconing", "phishing"]),
    ("blocks", &["domain", "connection", "request", "sender", "address"]),
    ("intercepts", &["traffic", "session", "packets", "messages", "handshake"]),
    ("escalates", &["privileges", "access", "permissions", "rights", "role"]),
    ("spoofs", &["certificate", "identity", "hostname", "signature", "header"]),
    ("modifies", &["registry", "configuration", "policy", "settings", "schedule"]),
    ("deletes", &["logs", "snapshots", "shadows", "history", "journal"]),
    ("installs", &["rootkit", "service", "extension", "keylogger", "proxy"]),
    ("monitors", &["endpoints", "processes", "accounts", "workloads", "events"]),
    ("quarantines", &["attachment", "binary", "host", "mailbox", "sample"]),
    ("overwrites", &["memory", "buffer", "stack", "heap", "pointer"]),
    ("leaks", &["secrets", "passwords", "hashes", "tickets", "sessions"]),
    ("triggers", &["alert", "crash", "overflow", "exception", "rule"]),
    ("sanitizes", &["input", "string", "filename", "query", "parameter"]),
    ("forges", &["ticket", "cookie", "assertion", "token", "request"]),
];

const SUBJECT_NOUNS: &[&str] =
    &["attacker", "operator", "implant", "worm", "trojan", "insider", "botnet", "adversary", "script", "agent"];
const ADJECTIVES: &[&str] =
    &["sensitive", "remote", "malicious", "legacy", "internal", "critical", "vulnerable", "unpatched", "hidden", "stolen"];
const HOST_NOUNS: &[&str] = &["servers", "hosts", "endpoints", "devices", "workstations"];

const MALWARE: &[&str] = &[
    "emotet", "trickbot", "wannacry", "mirai", "zeus", "dridex", "ryuk", "conti", "qakbot", "lockbit", "agenttesla",
    "njrat", "remcos", "formbook", "icedid", "blackcat", "redline", "raccoon", "gootloader", "bumblebee",
];
const ACTORS: &[&str] = &[
    "apt28", "lazarus group", "fin7", "sandworm team", "turla", "kimsuky", "carbanak gang", "equation group",
    "oceanlotus", "darkhotel", "wizard spider", "cozy bear", "fancy bear", "charming kitten", "mustang panda",
];
const SYSTEMS: &[&str] = &[
    "microsoft exchange", "apache struts", "openssl", "cisco ios", "vmware esxi", "fortinet fortios", "citrix adc",
    "jenkins", "wordpress", "android", "windows server", "linux kernel", "nginx", "tomcat", "chrome", "outlook",
    "sharepoint", "confluence", "gitlab", "kubernetes", "docker engine", "postgresql", "redis", "samba",
];
const COMPONENTS: &[&str] = &[
    "parser", "scheduler", "login page", "upload handler", "kernel module", "web console", "api gateway",
    "mail filter", "update service", "print spooler", "vpn client", "dns resolver", "smb server", "ldap module",
    "xml decoder", "image decoder", "json library", "session manager", "backup agent", "remote desktop",
];
const WEAKNESSES: &[&str] = &[
    "buffer overflow", "sql injection", "path traversal", "use after free", "command injection",
    "cross site scripting", "integer overflow", "race condition", "deserialization flaw", "authentication bypass",
];
const IMPACTS: &[&str] = &[
    "execute arbitrary code", "read arbitrary files", "crash the service", "gain administrator access",
    "steal session tokens", "bypass the login",
];
const DOMAIN_HEADS: &[&str] = &["update", "secure", "cdn", "login", "mail", "cloud", "sync", "files"];
const DOMAIN_TAILS: &[&str] = &["check", "verify", "portal", "service", "host"];
const TLDS: &[&str] = &["net", "com", "org", "info"];
const OCTETS: &[&str] = &["10", "45", "91", "103", "185", "203", "220", "4", "7", "12", "66", "77"];

const GENERAL_FRAMES: &[(&str, &[&str])] = &[
    ("bakes", &["bread", "cake", "cookies", "pie", "muffins"]),
    ("plays", &["football", "tennis", "chess", "music", "guitar"]),
    ("visits", &["museum", "park", "beach", "village", "market"]),
    ("reads", &["novel", "magazine", "poem", "letter", "newspaper"]),
    ("grows", &["tomatoes", "flowers", "herbs", "trees", "beans"]),
    ("paints", &["portrait", "landscape", "fence", "mural", "kitchen"]),
];
const GENERAL_SUBJECTS: &[&str] = &["chef", "family", "neighbor", "team", "student", "artist", "teacher", "farmer"];
const TECH_SENTENCES: &[&str] = &[
    "the new release improves startup time on most laptops .",
    "the team migrated the website to a faster hosting plan .",
    "the tutorial explains how to configure a home router .",
    "the library adds support for unicode text and dates .",
    "the survey shows that most users prefer dark themes .",
    "the developer wrote unit tests for the payment form .",
];
const NAV: &[&str] = &["home", "news", "about", "contact", "login", "subscribe", "share", "privacy", "terms", "menu"];

const FUNC_NAMES: &[&str] = &[
    "parse_header", "read_config", "copy_name", "handle_request", "load_profile", "decode_packet", "store_user",
    "format_message", "update_record", "process_input", "build_path", "set_title", "save_token", "read_line",
    "append_field", "check_user", "open_session", "write_log", "send_reply", "init_buffer",
];
const BUF_NAMES: &[&str] = &["buf", "dst", "name", "path", "title", "line", "field", "out", "tmp", "msg"];
const SRC_NAMES: &[&str] = &["src", "input", "data", "packet", "value", "text", "user", "req"];
const LEN_NAMES: &[&str] = &["len", "size", "count", "n", "length"];
const AUX_NAMES: &[&str] = &["total", "flags", "mode", "state", "retries", "offset"];
const BUF_SIZES: &[&str] = &["16", "32", "64", "128", "256"];
const STRUCTS: &[&str] = &["item", "record", "session", "entry"];
const LOG_WORDS: &[&str] = &["start", "done", "retry", "copy", "parse", "close"];

/// Template words outside the pools above.
const TEMPLATE_WORDS: &str = "the on in of to and after it according advisory a allows attackers security \
    question what happens when answer because instruction summarize report response user assistant generated \
    summary is affected by remote users should update version not applicable notice lists only for reference \
    fixed upgrade how fix vulnerability affecting issue deployed against researchers linked exploited install \
    sample beacons every hour patch immediately traffic was blocked firewall targets with contacts connects \
    exploiting cve mix flour sugar my page bulletin int char const size_t void return if sizeof stdin struct \
    free null strcpy strncpy gets fgets sprintf snprintf memcpy lookup log_event while for 0 1 2 3 4 5 6 7 8 9 \
    s d e x c lookup_item release_item NULL this";

/// Upper bound on distinct tokens produced by the fixed grammar, before
/// pseudo-word filler.
pub const GRAMMAR_TOKEN_BUDGET: usize = 900;

// ---------------------------------------------------------------- spec and outputs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Taken from the run's global seed.
    #[serde(skip)]
    pub seed: u64,
    pub docs: BTreeMap<Category, usize>,
    /// Distinct-token budget; whatever the grammar leaves is pseudo-word filler.
    pub vocab_size: usize,
    pub duplicate_rate: f64,
    /// Fraction of web documents that are off-topic.
    pub offtopic_rate: f64,
    pub retrieval_docs: usize,
    pub retrieval_queries: usize,
    /// Training queries per retrieval document, drawn from templates the test queries never use.
    pub train_queries_per_doc: usize,
    pub adversarial_queries: usize,
    pub adversarial_train: usize,
    /// Cross-encoder training queries over freshly written advisories.
    pub cross_fresh_queries: usize,
    pub ner_train: usize,
    pub ner_test: usize,
    pub vuln_train: usize,
    pub vuln_test: usize,
    pub eval_text_docs: usize,
    pub eval_code_docs: usize,
    pub labeled_seeds: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let docs = [
            (Category::Seed, 650),
            (Category::Web, 320),
            (Category::Reasoning, 200),
            (Category::Instruction, 200),
            (Category::CodeVuln, 650),
            (Category::Dialogue, 160),
            (Category::Baseline, 200),
            (Category::Synthetic, 200),
        ]
        .into_iter()
        .collect();
        Self {
            seed: 7,
            docs,
            vocab_size: 2000,
            duplicate_rate: 0.02,
            offtopic_rate: 0.2,
            retrieval_docs: 200,
            retrieval_queries: 100,
            train_queries_per_doc: 4,
            adversarial_queries: 40,
            adversarial_train: 80,
            cross_fresh_queries: 4000,
            ner_train: 800,
            ner_test: 200,
            vuln_train: 600,
            vuln_test: 200,
            eval_text_docs: 400,
            eval_code_docs: 200,
            labeled_seeds: 200,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.duplicate_rate) {
            return Err(ForgeError::Config(format!("duplicate_rate must lie in [0, 0.5], got {}", self.duplicate_rate)));
        }
        if !(0.0..=1.0).contains(&self.offtopic_rate) {
            return Err(ForgeError::Config(format!("offtopic_rate must lie in [0, 1], got {}", self.offtopic_rate)));
        }
        if self.vocab_size < GRAMMAR_TOKEN_BUDGET {
            return Err(ForgeError::Config(format!(
                "vocab_size {} is below the grammar's budget of {GRAMMAR_TOKEN_BUDGET}",
                self.vocab_size
            )));
        }
        if self.retrieval_queries > self.retrieval_docs {
            return Err(ForgeError::Config("retrieval_queries exceeds retrieval_docs".into()));
        }
        let keys = SYSTEMS.len() * COMPONENTS.len();
        let wanted = self.retrieval_docs + self.adversarial_queries + self.adversarial_train;
        if wanted > keys {
            return Err(ForgeError::Config(format!("{wanted} retrieval keys requested, only {keys} exist")));
        }
        Ok(())
    }

    pub fn total_docs(&self) -> usize {
        self.docs.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlantedDuplicate {
    pub original: String,
    pub duplicate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub query: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query: String,
    pub document: String,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalSet {
    pub docs: Vec<Document>,
    pub train: Vec<TrainPair>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnExample {
    pub id: String,
    pub code: String,
    pub vulnerable: bool,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub corpus: Vec<Document>,
    pub duplicates: Vec<PlantedDuplicate>,
    pub seeds: Vec<LabeledSeed>,
    pub lexicon: Vec<String>,
    pub verbs: Vec<String>,
    pub eval_docs: Vec<AnnotatedDoc>,
    pub retrieval: RetrievalSet,
    pub adversarial: RetrievalSet,
    /// query id to decoy doc id in the adversarial set.
    pub decoys: BTreeMap<String, String>,
    pub cross_train: Vec<LabeledPair>,
    pub ner_train: Vec<NerExample>,
    pub ner_test: Vec<NerExample>,
    pub vuln_train: Vec<VulnExample>,
    pub vuln_test: Vec<VulnExample>,
}

/// File names inside a synth output directory.
pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const DUPLICATES: &str = "duplicates.jsonl";
    pub const SEEDS: &str = "seeds.jsonl";
    pub const LEXICON: &str = "lexicon.txt";
    pub const VERBS: &str = "verbs.txt";
    pub const EVAL_DOCS: &str = "eval_docs.jsonl";
    pub const RETRIEVAL_DOCS: &str = "retrieval_docs.jsonl";
    pub const RETRIEVAL_TRAIN: &str = "retrieval_train.jsonl";
    pub const RETRIEVAL_QUERIES: &str = "retrieval_queries.jsonl";
    pub const RETRIEVAL_QRELS: &str = "retrieval_qrels.jsonl";
    pub const ADV_DOCS: &str = "adversarial_docs.jsonl";
    pub const ADV_QUERIES: &str = "adversarial_queries.jsonl";
    pub const ADV_QRELS: &str = "adversarial_qrels.jsonl";
    pub const ADV_DECOYS: &str = "adversarial_decoys.json";
    pub const CROSS_TRAIN: &str = "cross_train.jsonl";
    pub const NER_TRAIN: &str = "ner_train.jsonl";
    pub const NER_TEST: &str = "ner_test.jsonl";
    pub const VULN_TRAIN: &str = "vuln_train.jsonl";
    pub const VULN_TEST: &str = "vuln_test.jsonl";
}

impl SynthOutput {
    /// Writes every artifact into `dir` and returns the file names written.
    pub fn write(&self, dir: &Path) -> Result<Vec<&'static str>> {
        use files::*;
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(CORPUS), &self.corpus)?;
        write_jsonl(&dir.join(DUPLICATES), &self.duplicates)?;
        write_jsonl(&dir.join(SEEDS), &self.seeds)?;
        std::fs::write(dir.join(LEXICON), lines(&self.lexicon))?;
        std::fs::write(dir.join(VERBS), lines(&self.verbs))?;
        write_jsonl(&dir.join(EVAL_DOCS), &self.eval_docs)?;
        write_jsonl(&dir.join(RETRIEVAL_DOCS), &self.retrieval.docs)?;
        write_jsonl(&dir.join(RETRIEVAL_TRAIN), &self.retrieval.train)?;
        write_jsonl(&dir.join(RETRIEVAL_QUERIES), &self.retrieval.queries)?;
        write_qrels(&dir.join(RETRIEVAL_QRELS), &self.retrieval.qrels)?;
        write_jsonl(&dir.join(ADV_DOCS), &self.adversarial.docs)?;
        write_jsonl(&dir.join(ADV_QUERIES), &self.adversarial.queries)?;
        write_qrels(&dir.join(ADV_QRELS), &self.adversarial.qrels)?;
        std::fs::write(dir.join(ADV_DECOYS), serde_json::to_string_pretty(&self.decoys)?)?;
        write_jsonl(&dir.join(CROSS_TRAIN), &self.cross_train)?;
        write_jsonl(&dir.join(NER_TRAIN), &self.ner_train)?;
        write_jsonl(&dir.join(NER_TEST), &self.ner_test)?;
        write_jsonl(&dir.join(VULN_TRAIN), &self.vuln_train)?;
        write_jsonl(&dir.join(VULN_TEST), &self.vuln_test)?;
        Ok(vec![
            CORPUS, DUPLICATES, SEEDS, LEXICON, VERBS, EVAL_DOCS, RETRIEVAL_DOCS, RETRIEVAL_TRAIN, RETRIEVAL_QUERIES,
            RETRIEVAL_QRELS, ADV_DOCS, ADV_QUERIES, ADV_QRELS, ADV_DECOYS, CROSS_TRAIN, NER_TRAIN, NER_TEST,
            VULN_TRAIN, VULN_TEST,
        ])
    }
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

// ---------------------------------------------------------------- text grammar

#[derive(Default)]
struct TextBuilder {
    s: String,
    ann: Vec<Annotation>,
}

impl TextBuilder {
    fn word(&mut self, w: &str) {
        if !self.s.is_empty() {
            self.s.push(' ');
        }
        self.s.push_str(w);
    }

    fn tagged(&mut self, w: &str, category: EvalCategory) {
        self.word(w);
        let end = self.s.len();
        self.ann.push(Annotation { start: end - w.len(), end, category });
    }

    fn words(&mut self, ws: &str) {
        for w in ws.split_whitespace() {
            self.word(w);
        }
    }
}

fn pick<'a>(rng: &mut Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("nonempty pool")
}

fn frame(rng: &mut Rng) -> (&'static str, &'static str) {
    let (verb, objs) = FRAMES.choose(rng).expect("frames");
    (verb, pick(rng, objs))
}

fn subject(rng: &mut Rng, b: &mut TextBuilder) {
    match rng.random_range(0..10) {
        0..4 => b.word(pick(rng, MALWARE)),
        4..6 => b.words(pick(rng, ACTORS)),
        _ => {
            b.word("the");
            b.tagged(pick(rng, SUBJECT_NOUNS), EvalCategory::Noun);
        }
    }
}

fn security_sentence(rng: &mut Rng, b: &mut TextBuilder) {
    let (verb, obj) = frame(rng);
    match rng.random_range(0..6) {
        0 => {
            subject(rng, b);
            b.tagged(verb, EvalCategory::Verb);
            b.word("the");
            b.tagged(obj, EvalCategory::Noun);
        }
        1 => {
            subject(rng, b);
            b.tagged(verb, EvalCategory::Verb);
            b.word("the");
            b.tagged(obj, EvalCategory::Noun);
            b.word("on");
            b.words(pick(rng, SYSTEMS));
            b.tagged(pick(rng, HOST_NOUNS), EvalCategory::Noun);
        }
        2 => {
            b.word("after");
            subject(rng, b);
            b.tagged(verb, EvalCategory::Verb);
            b.word("the");
            b.tagged(obj, EvalCategory::Noun);
            b.word(",");
            b.word("it");
            let (v2, o2) = frame(rng);
            b.tagged(v2, EvalCategory::Verb);
            b.word("the");
            b.tagged(o2, EvalCategory::Noun);
        }
        3 => {
            subject(rng, b);
            b.tagged(verb, EvalCategory::Verb);
            b.word(pick(rng, ADJECTIVES));
            b.tagged(obj, EvalCategory::Noun);
            b.word("and");
            let (v2, o2) = frame(rng);
            b.tagged(v2, EvalCategory::Verb);
            b.word("the");
            b.tagged(o2, EvalCategory::Noun);
        }
        4 => {
            b.words("according to the advisory ,");
            subject(rng, b);
            b.tagged(verb, EvalCategory::Verb);
            b.word("the");
            b.tagged(obj, EvalCategory::Noun);
            b.word("in");
            b.words(pick(rng, SYSTEMS));
        }
        _ => {
            b.word("a");
            b.words(pick(rng, WEAKNESSES));
            b.words("in the");
            b.words(pick(rng, COMPONENTS));
            b.word("of");
            b.words(pick(rng, SYSTEMS));
            b.words("allows attackers to");
            b.words(pick(rng, IMPACTS));
        }
    }
    b.word(".");
}

fn general_sentence(rng: &mut Rng, b: &mut TextBuilder) {
    let (verb, objs) = GENERAL_FRAMES.choose(rng).expect("frames");
    b.words(if rng.random_bool(0.5) { "the" } else { "my" });
    b.word(pick(rng, GENERAL_SUBJECTS));
    b.word(verb);
    b.word("the");
    b.word(pick(rng, objs));
    b.word(".");
}

fn security_paragraph(rng: &mut Rng, b: &mut TextBuilder, lo: usize, hi: usize) {
    for _ in 0..rng.random_range(lo..=hi) {
        security_sentence(rng, b);
    }
}

/// Deterministic pronounceable filler words, none of which is a grammar word.
fn pseudo_words(n: usize) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    let syll: Vec<String> = ONSETS.iter().flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}"))).collect();
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize;
    while out.len() < n {
        let (a, b, c) = (i % syll.len(), (i / syll.len()) % syll.len(), i / (syll.len() * syll.len()));
        // a trailing consonant keeps every filler word at least five letters
        out.push(format!("{}{}{}x", syll[a], syll[b], syll[c % syll.len()]));
        i += 1;
    }
    out
}

fn text_doc(category: Category, rng: &mut Rng, filler: &[String], offtopic_rate: f64) -> String {
    let mut b = TextBuilder::default();
    match category {
        Category::Seed => {
            b.words("security advisory :");
            security_paragraph(rng, &mut b, 6, 10);
        }
        Category::Web => {
            for _ in 0..rng.random_range(2..5) {
                b.word(pick(rng, NAV));
                b.word("|");
            }
            if rng.random_bool(offtopic_rate) {
                for _ in 0..rng.random_range(6..10) {
                    general_sentence(rng, &mut b);
                }
            } else {
                security_paragraph(rng, &mut b, 5, 8);
            }
            if !filler.is_empty() {
                for _ in 0..rng.random_range(2..5) {
                    b.word(&filler[rng.random_range(0..filler.len())]);
                }
            }
        }
        Category::Reasoning => {
            for _ in 0..rng.random_range(2..4) {
                b.words("question : what happens when");
                security_sentence(rng, &mut b);
                b.s.pop();
                b.words("? answer : because");
                security_sentence(rng, &mut b);
            }
        }
        Category::Instruction => {
            b.words("instruction : summarize the report . response :");
            security_paragraph(rng, &mut b, 5, 8);
        }
        Category::Dialogue => {
            for _ in 0..rng.random_range(3..6) {
                b.words("user :");
                security_sentence(rng, &mut b);
                b.words("assistant :");
                security_sentence(rng, &mut b);
            }
        }
        Category::Baseline => {
            for _ in 0..rng.random_range(3..6) {
                b.words(pick(rng, TECH_SENTENCES));
            }
            security_paragraph(rng, &mut b, 2, 3);
            if !filler.is_empty() {
                b.word(&filler[rng.random_range(0..filler.len())]);
            }
        }
        Category::Synthetic => {
            b.words("generated summary :");
            security_paragraph(rng, &mut b, 6, 10);
        }
        Category::CodeVuln => unreachable!("code documents come from the code generator"),
    }
    b.s
}

// ---------------------------------------------------------------- code grammar

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VulnKind {
    Copy,
    Read,
    Format,
    Memcpy,
    Index,
    Free,
}

const KINDS: [VulnKind; 6] =
    [VulnKind::Copy, VulnKind::Read, VulnKind::Format, VulnKind::Memcpy, VulnKind::Index, VulnKind::Free];

impl VulnKind {
    fn name(self) -> &'static str {
        match self {
            VulnKind::Copy => "unbounded_copy",
            VulnKind::Read => "unbounded_read",
            VulnKind::Format => "unbounded_format",
            VulnKind::Memcpy => "unchecked_length",
            VulnKind::Index => "unchecked_index",
            VulnKind::Free => "use_after_free",
        }
    }
}

fn filler_stmt(rng: &mut Rng) -> String {
    let v = pick(rng, AUX_NAMES);
    match rng.random_range(0..4) {
        0 => format!("int {v} = {};", rng.random_range(0..10)),
        1 => format!("{v} = {v} + {};", rng.random_range(1..10)),
        2 => format!("log_event(\"{}\");", pick(rng, LOG_WORDS)),
        _ => format!("{v} |= {};", rng.random_range(1..10)),
    }
}

/// A C-like function; `vulnerable` picks the unsafe or guarded variant.
fn code_function(rng: &mut Rng, kind: VulnKind, vulnerable: bool) -> String {
    let f = pick(rng, FUNC_NAMES);
    let buf = pick(rng, BUF_NAMES);
    let src = pick(rng, SRC_NAMES);
    let len = pick(rng, LEN_NAMES);
    let size = pick(rng, BUF_SIZES);
    let mut body: Vec<String> = Vec::new();
    let sig;
    match kind {
        VulnKind::Free => {
            let st = pick(rng, STRUCTS);
            sig = format!("int {f}(const char *{src}, int {len})");
            body.push(format!("struct {st} *{buf} = lookup_item({src});"));
            if vulnerable {
                body.push(format!("release_item({buf});"));
                body.push(format!("{buf}->count = {len};"));
            } else {
                body.push(format!("{buf}->count = {len};"));
                body.push(format!("release_item({buf});"));
                body.push(format!("{buf} = NULL;"));
            }
        }
        _ => {
            sig = format!("int {f}(const char *{src}, size_t {len})");
            body.push(format!("char {buf}[{size}];"));
            let stmts: Vec<String> = match (kind, vulnerable) {
                (VulnKind::Copy, true) => vec![format!("strcpy({buf}, {src});")],
                (VulnKind::Copy, false) => vec![
                    format!("strncpy({buf}, {src}, sizeof({buf}) - 1);"),
                    format!("{buf}[sizeof({buf}) - 1] = 0;"),
                ],
                (VulnKind::Read, true) => vec![format!("gets({buf});")],
                (VulnKind::Read, false) => vec![format!("fgets({buf}, sizeof({buf}), stdin);")],
                (VulnKind::Format, true) => vec![format!("sprintf({buf}, \"%s\", {src});")],
                (VulnKind::Format, false) => vec![format!("snprintf({buf}, sizeof({buf}), \"%s\", {src});")],
                (VulnKind::Memcpy, true) => vec![format!("memcpy({buf}, {src}, {len});")],
                (VulnKind::Memcpy, false) => vec![
                    format!("if ({len} >= sizeof({buf})) {{ return -1; }}"),
                    format!("memcpy({buf}, {src}, {len});"),
                ],
                (VulnKind::Index, true) => vec![format!("{buf}[{len}] = {src}[0];")],
                (VulnKind::Index, false) => {
                    vec![format!("if ({len} < sizeof({buf})) {{ {buf}[{len}] = {src}[0]; }}")]
                }
                (VulnKind::Free, _) => unreachable!(),
            };
            body.extend(stmts);
        }
    }
    for _ in 0..rng.random_range(1..4) {
        let at = rng.random_range(1..=body.len());
        body.insert(at, filler_stmt(rng));
    }
    let mut s = format!("{sig} {{\n");
    for line in body {
        s.push_str("    ");
        s.push_str(&line);
        s.push('\n');
    }
    s.push_str("    return 0;\n}\n");
    s
}

fn random_function(rng: &mut Rng) -> (String, VulnKind, bool) {
    let kind = *KINDS.choose(rng).expect("kinds");
    let vulnerable = rng.random_bool(0.5);
    (code_function(rng, kind, vulnerable), kind, vulnerable)
}

// ---------------------------------------------------------------- entities

fn cve(rng: &mut Rng) -> String {
    format!("cve-{}-{}", rng.random_range(2017..2024), 1000 + 37 * rng.random_range(0..40))
}

fn indicator(rng: &mut Rng) -> String {
    if rng.random_bool(0.5) {
        format!("{}-{}.{}", pick(rng, DOMAIN_HEADS), pick(rng, DOMAIN_TAILS), pick(rng, TLDS))
    } else {
        (0..4).map(|_| pick(rng, OCTETS)).collect::<Vec<_>>().join(".")
    }
}

struct NerBuilder {
    tokens: Vec<String>,
    tags: Vec<String>,
}

impl NerBuilder {
    fn plain(&mut self, text: &str) {
        for t in tokenize(text) {
            self.tokens.push(t);
            self.tags.push("O".into());
        }
    }

    fn entity(&mut self, text: &str, label: &str) {
        for (i, t) in tokenize(text).into_iter().enumerate() {
            self.tokens.push(t);
            self.tags.push(format!("{}-{label}", if i == 0 { "B" } else { "I" }));
        }
    }
}

fn ner_sentence(rng: &mut Rng, id: String) -> NerExample {
    let mut b = NerBuilder { tokens: Vec::new(), tags: Vec::new() };
    let org = pick(rng, ACTORS);
    let mal = pick(rng, MALWARE);
    let sys = pick(rng, SYSTEMS);
    let vul = cve(rng);
    let ind = indicator(rng);
    match rng.random_range(0..8) {
        0 => {
            b.entity(org, "Organization");
            b.plain("deployed");
            b.entity(mal, "Malware");
            b.plain("against");
            b.entity(sys, "System");
            b.plain("servers .");
        }
        1 => {
            b.entity(mal, "Malware");
            b.plain("connects to");
            b.entity(&ind, "Indicator");
            b.plain("after exploiting");
            b.entity(&vul, "Vulnerability");
            b.plain(".");
        }
        2 => {
            b.plain("researchers linked");
            b.entity(mal, "Malware");
            b.plain("to");
            b.entity(org, "Organization");
            b.plain(".");
        }
        3 => {
            b.entity(org, "Organization");
            b.plain("exploited");
            b.entity(&vul, "Vulnerability");
            b.plain("in");
            b.entity(sys, "System");
            b.plain("to install");
            b.entity(mal, "Malware");
            b.plain(".");
        }
        4 => {
            b.plain("the");
            b.entity(mal, "Malware");
            b.plain("sample beacons to");
            b.entity(&ind, "Indicator");
            b.plain("every hour .");
        }
        5 => {
            b.entity(sys, "System");
            b.plain("users should patch");
            b.entity(&vul, "Vulnerability");
            b.plain("immediately .");
        }
        6 => {
            b.plain("traffic to");
            b.entity(&ind, "Indicator");
            b.plain("was blocked by the firewall .");
        }
        _ => {
            b.entity(org, "Organization");
            b.plain("targets");
            b.entity(sys, "System");
            b.plain("with");
            b.entity(mal, "Malware");
            b.plain("and contacts");
            b.entity(&ind, "Indicator");
            b.plain(".");
        }
    }
    NerExample { id, tokens: b.tokens, tags: b.tags }
}

// ---------------------------------------------------------------- retrieval

struct Key {
    system: &'static str,
    component: &'static str,
    weakness: &'static str,
}

fn advisory_text(rng: &mut Rng, k: &Key) -> String {
    let mut b = TextBuilder::default();
    b.word("a");
    b.words(k.weakness);
    b.words("in the");
    b.words(k.component);
    b.word("of");
    b.words(k.system);
    b.words("allows remote attackers to");
    b.words(pick(rng, IMPACTS));
    b.word(".");
    security_sentence(rng, &mut b);
    b.words("users should update");
    b.words(k.system);
    b.words("to version");
    b.words(&format!("{} . {} .", rng.random_range(1..10), rng.random_range(0..10)));
    b.s
}

fn train_query(rng: &mut Rng, k: &Key) -> String {
    match rng.random_range(0..5) {
        0 => format!("{} {} {}", k.system, k.component, k.weakness),
        1 => format!("how to fix {} in {} {}", k.weakness, k.system, k.component),
        2 => format!("{} in the {} of {}", k.weakness, k.component, k.system),
        3 => format!("is {} affected by {} in its {}", k.system, k.weakness, k.component),
        _ => format!("{} advisory for {} {}", k.weakness, k.system, k.component),
    }
}

fn test_query(k: &Key) -> String {
    format!("{} vulnerability affecting the {} of {}", k.weakness, k.component, k.system)
}

fn decoy_text(k: &Key) -> String {
    format!(
        "{sys} {comp} {weak} notice : not applicable . this bulletin lists {sys} {comp} {weak} only for reference .",
        sys = k.system,
        comp = k.component,
        weak = k.weakness
    )
}

fn shuffled_keys(rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut keys: Vec<(usize, usize)> =
        (0..SYSTEMS.len()).flat_map(|s| (0..COMPONENTS.len()).map(move |c| (s, c))).collect();
    keys.shuffle(rng);
    keys
}

fn retrieval_doc(id: String, content: String) -> Document {
    Document::new(id, Category::Seed, Modality::Text, content)
}

/// Retrieval documents with their `(system, component, weakness)` keys.
fn build_retrieval(spec: &SynthSpec, keys: &[(usize, usize)], rng: &mut Rng) -> (RetrievalSet, Vec<(usize, usize, usize)>) {
    let mut set = RetrievalSet::default();
    let mut doc_keys = Vec::new();
    for (i, &(s, c)) in keys.iter().take(spec.retrieval_docs).enumerate() {
        let w = rng.random_range(0..WEAKNESSES.len());
        let k = Key { system: SYSTEMS[s], component: COMPONENTS[c], weakness: WEAKNESSES[w] };
        let doc_id = format!("adv-{i:04}");
        set.docs.push(retrieval_doc(doc_id.clone(), advisory_text(rng, &k)));
        doc_keys.push((s, c, w));
        for _ in 0..spec.train_queries_per_doc {
            set.train.push(TrainPair { query: train_query(rng, &k), doc_id: doc_id.clone() });
        }
        if i < spec.retrieval_queries {
            let qid = format!("q-{i:04}");
            set.queries.push(Query { query_id: qid.clone(), text: test_query(&k) });
            set.qrels.insert(qid, BTreeSet::from([doc_id]));
        }
    }
    (set, doc_keys)
}

fn build_adversarial(
    spec: &SynthSpec,
    keys: &[(usize, usize)],
    rng: &mut Rng,
) -> (RetrievalSet, BTreeMap<String, String>, Vec<LabeledPair>) {
    let mut set = RetrievalSet::default();
    let mut decoys = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut train_docs = Vec::new();
    for (i, &(s, c)) in keys.iter().enumerate() {
        let k = Key { system: SYSTEMS[s], component: COMPONENTS[c], weakness: pick(rng, WEAKNESSES) };
        let pos = advisory_text(rng, &k);
        let decoy = decoy_text(&k);
        if i < spec.adversarial_queries {
            let qid = format!("aq-{i:04}");
            let pid = format!("adv-pos-{i:04}");
            let did = format!("adv-decoy-{i:04}");
            set.docs.push(retrieval_doc(pid.clone(), pos));
            set.docs.push(retrieval_doc(did.clone(), decoy));
            set.queries.push(Query { query_id: qid.clone(), text: test_query(&k) });
            set.qrels.insert(qid.clone(), BTreeSet::from([pid]));
            decoys.insert(qid, did);
        } else {
            let q = if rng.random_bool(0.5) { test_query(&k) } else { train_query(rng, &k) };
            train_docs.push((q, pos, decoy));
        }
    }
    for (i, (q, pos, decoy)) in train_docs.iter().enumerate() {
        pairs.push(LabeledPair { query: q.clone(), document: pos.clone(), label: 1.0 });
        pairs.push(LabeledPair { query: q.clone(), document: decoy.clone(), label: 0.0 });
        if train_docs.len() > 1 {
            let j = (i + 1 + rng.random_range(0..train_docs.len() - 1)) % train_docs.len();
            pairs.push(LabeledPair { query: q.clone(), document: train_docs[j].1.clone(), label: 0.0 });
        }
    }
    (set, decoys, pairs)
}

/// One positive and up to four negatives per training pair: a random
/// document plus near misses that share exactly the weakness, the system or
/// the component with the positive.
fn main_cross_pairs(set: &RetrievalSet, keys: &[(usize, usize, usize)], rng: &mut Rng) -> Vec<LabeledPair> {
    let index: BTreeMap<&str, usize> = set.docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let mut out = Vec::new();
    for p in &set.train {
        let pos = index[p.doc_id.as_str()];
        out.push(LabeledPair { query: p.query.clone(), document: set.docs[pos].content.clone(), label: 1.0 });
        let (s, c, w) = keys[pos];
        let near: [&dyn Fn(&(usize, usize, usize)) -> bool; 4] = [
            &|_| true,
            &|k| k.2 == w && k.0 != s && k.1 != c,
            &|k| k.0 == s && k.1 != c,
            &|k| k.1 == c && k.0 != s,
        ];
        for keep in near {
            let pool: Vec<usize> = (0..keys.len()).filter(|&j| j != pos && keep(&keys[j])).collect();
            if let Some(&j) = pool.get(rng.random_range(0..pool.len().max(1))) {
                out.push(LabeledPair { query: p.query.clone(), document: set.docs[j].content.clone(), label: 0.0 });
            }
        }
    }
    out
}

/// Pairs over freshly written advisories for random keys outside `held` (the
/// keys behind evaluation queries):
/// a positive, a random negative and three near misses that each change one
/// field of the key.
fn fresh_cross_pairs(n: usize, held: &BTreeSet<(usize, usize)>, rng: &mut Rng) -> Vec<LabeledPair> {
    let draw = |rng: &mut Rng, s: Option<usize>, c: Option<usize>, w: Option<usize>| loop {
        let k = (
            s.unwrap_or_else(|| rng.random_range(0..SYSTEMS.len())),
            c.unwrap_or_else(|| rng.random_range(0..COMPONENTS.len())),
            w.unwrap_or_else(|| rng.random_range(0..WEAKNESSES.len())),
        );
        if !held.contains(&(k.0, k.1)) {
            return k;
        }
    };
    let text = |rng: &mut Rng, (s, c, w): (usize, usize, usize)| {
        advisory_text(rng, &Key { system: SYSTEMS[s], component: COMPONENTS[c], weakness: WEAKNESSES[w] })
    };
    let mut out = Vec::with_capacity(5 * n);
    for _ in 0..n {
        let (s, c, w) = draw(rng, None, None, None);
        let key = Key { system: SYSTEMS[s], component: COMPONENTS[c], weakness: WEAKNESSES[w] };
        let query = if rng.random_bool(0.5) { test_query(&key) } else { train_query(rng, &key) };
        out.push(LabeledPair { query: query.clone(), document: text(rng, (s, c, w)), label: 1.0 });
        let negatives = [
            draw(rng, None, None, None),
            draw(rng, Some(s), None, Some(w)),
            draw(rng, None, Some(c), Some(w)),
            draw(rng, Some(s), Some(c), None),
        ];
        for k in negatives {
            if k != (s, c, w) {
                out.push(LabeledPair { query: query.clone(), document: text(rng, k), label: 0.0 });
            }
        }
    }
    out
}

// ---------------------------------------------------------------- duplicates

/// Appends one word (text) or a short trailing comment (code).
fn near_copy(doc: &Document, rng: &mut Rng, filler: &[String]) -> String {
    match doc.modality {
        Modality::Text => {
            let w = if filler.is_empty() { "update" } else { &filler[rng.random_range(0..filler.len())] };
            format!("{} {w}", doc.content)
        }
        Modality::Code => format!("{}// {}\n", doc.content, pick(rng, LOG_WORDS)),
    }
}

/// `round(rate * n)` distinct originals each get one near copy; the result
/// has exactly `n` documents when `n` is the target size.
fn plant_duplicates(
    originals: Vec<Document>,
    pairs: usize,
    rng: &mut Rng,
    filler: &[String],
) -> (Vec<Document>, Vec<PlantedDuplicate>) {
    let mut idx: Vec<usize> = (0..originals.len()).collect();
    idx.shuffle(rng);
    let mut chosen: Vec<usize> = idx.into_iter().take(pairs).collect();
    chosen.sort_unstable();
    let mut out = originals.clone();
    let mut ledger = Vec::with_capacity(pairs);
    for (k, &i) in chosen.iter().enumerate() {
        let orig = &originals[i];
        let mut dup = orig.clone();
        dup.id = format!("{}-dup{k:03}", orig.id);
        dup.content = near_copy(orig, rng, filler);
        ledger.push(PlantedDuplicate { original: orig.id.clone(), duplicate: dup.id.clone() });
        out.push(dup);
    }
    (out, ledger)
}

/// Random-word documents where planted pairs differ by one interior token and
/// all other pairs share almost no shingles.
pub fn planted_dedup_corpus(n: usize, rate: f64, doc_len: usize, seed: u64) -> Result<(Vec<Document>, Vec<PlantedDuplicate>)> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(ForgeError::Config(format!("duplicate rate must lie in [0, 0.5], got {rate}")));
    }
    if doc_len < 3 {
        return Err(ForgeError::Config("dedup fixture documents need at least 3 tokens".into()));
    }
    let mut rng = stream_rng(seed, "synth.dedup");
    let words = pseudo_words(6000);
    let pairs = (rate * n as f64).round() as usize;
    let originals: Vec<Document> = (0..n - pairs)
        .map(|i| {
            let toks: Vec<&str> = (0..doc_len).map(|_| words[rng.random_range(0..words.len())].as_str()).collect();
            Document::new(format!("d{i:04}"), Category::Web, Modality::Text, toks.join(" "))
        })
        .collect();
    let mut out = originals.clone();
    let mut ledger = Vec::new();
    let mut idx: Vec<usize> = (0..originals.len()).collect();
    idx.shuffle(&mut rng);
    let mut chosen: Vec<usize> = idx.into_iter().take(pairs).collect();
    chosen.sort_unstable();
    for (k, &i) in chosen.iter().enumerate() {
        let mut toks: Vec<&str> = originals[i].content.split(' ').collect();
        let at = doc_len / 2;
        toks[at] = words[(rng.random_range(0..words.len()) + 1) % words.len()].as_str();
        let id = format!("d{i:04}-dup{k:03}");
        out.push(Document::new(id.clone(), Category::Web, Modality::Text, toks.join(" ")));
        ledger.push(PlantedDuplicate { original: originals[i].id.clone(), duplicate: id });
    }
    Ok((out, ledger))
}

// ---------------------------------------------------------------- entry point

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let filler = pseudo_words(spec.vocab_size - GRAMMAR_TOKEN_BUDGET);
    let seed = spec.seed;

    let mut rng = stream_rng(seed, "synth.corpus");
    let mut originals = Vec::new();
    let total = spec.total_docs();
    let pairs = (spec.duplicate_rate * total as f64).round() as usize;
    // Originals are drawn proportionally so the final count is exactly `total`.
    let mut remaining = total - pairs;
    let cats: Vec<(Category, usize)> = spec.docs.iter().map(|(c, n)| (*c, *n)).collect();
    for (j, (cat, n)) in cats.iter().enumerate() {
        let take = if j + 1 == cats.len() {
            remaining
        } else {
            ((*n as f64) * (total - pairs) as f64 / total.max(1) as f64).round() as usize
        }
        .min(remaining);
        remaining -= take;
        for i in 0..take {
            let id = format!("{}-{i:05}", cat.as_str());
            let doc = match cat {
                Category::CodeVuln => Document::new(id, *cat, Modality::Code, random_function(&mut rng).0),
                _ => Document::new(id, *cat, Modality::Text, text_doc(*cat, &mut rng, &filler, spec.offtopic_rate)),
            };
            originals.push(doc);
        }
    }
    let (corpus, duplicates) = plant_duplicates(originals, pairs, &mut rng, &filler);

    let mut rng = stream_rng(seed, "synth.seeds");
    let mut seeds = Vec::new();
    for i in 0..spec.labeled_seeds {
        let mut b = TextBuilder::default();
        let label = if i % 2 == 0 {
            security_paragraph(&mut rng, &mut b, 1, 2);
            Relevance::Relevant
        } else {
            general_sentence(&mut rng, &mut b);
            general_sentence(&mut rng, &mut b);
            Relevance::Irrelevant
        };
        seeds.push(LabeledSeed { content: b.s, label });
    }

    let mut lexicon: BTreeSet<String> = FRAMES.iter().flat_map(|(v, o)| std::iter::once(*v).chain(o.iter().copied())).map(str::to_string).collect();
    lexicon.extend(MALWARE.iter().map(|s| s.to_string()));
    lexicon.extend(["attackers", "advisory", "vulnerability", "exploit", "cve", "security"].map(String::from));
    let verbs: Vec<String> = FRAMES.iter().map(|(v, _)| v.to_string()).collect();

    let mut rng = stream_rng(seed, "synth.eval");
    let mut eval_docs = Vec::new();
    for i in 0..spec.eval_text_docs {
        let mut b = TextBuilder::default();
        while b.ann.is_empty() {
            security_paragraph(&mut rng, &mut b, 1, 2);
        }
        let doc = Document::new(format!("eval-text-{i:04}"), Category::Seed, Modality::Text, b.s);
        eval_docs.push(AnnotatedDoc { doc, annotations: b.ann });
    }
    for i in 0..spec.eval_code_docs {
        let code = random_function(&mut rng).0;
        let annotations = annotate_code(&code);
        let doc = Document::new(format!("eval-code-{i:04}"), Category::CodeVuln, Modality::Code, code);
        eval_docs.push(AnnotatedDoc { doc, annotations });
    }

    let mut rng = stream_rng(seed, "synth.retrieval");
    let keys = shuffled_keys(&mut rng);
    let (retrieval, retrieval_keys) = build_retrieval(spec, &keys, &mut rng);
    let adv_keys = &keys[spec.retrieval_docs..spec.retrieval_docs + spec.adversarial_queries + spec.adversarial_train];
    let (adversarial, decoys, adv_pairs) = build_adversarial(spec, adv_keys, &mut rng);
    let mut cross_train = main_cross_pairs(&retrieval, &retrieval_keys, &mut rng);
    cross_train.extend(adv_pairs);
    let held: BTreeSet<(usize, usize)> =
        keys[..spec.retrieval_queries].iter().chain(&adv_keys[..spec.adversarial_queries]).copied().collect();
    cross_train.extend(fresh_cross_pairs(spec.cross_fresh_queries, &held, &mut rng));

    let mut rng = stream_rng(seed, "synth.ner");
    let ner_train = (0..spec.ner_train).map(|i| ner_sentence(&mut rng, format!("ner-train-{i:05}"))).collect();
    let ner_test = (0..spec.ner_test).map(|i| ner_sentence(&mut rng, format!("ner-test-{i:05}"))).collect();

    let mut rng = stream_rng(seed, "synth.vuln");
    let mut vuln = |prefix: &str, n: usize| -> Vec<VulnExample> {
        (0..n)
            .map(|i| {
                let (code, kind, vulnerable) = random_function(&mut rng);
                VulnExample { id: format!("{prefix}-{i:05}"), code, vulnerable, kind: kind.name().to_string() }
            })
            .collect()
    };
    let vuln_train = vuln("vuln-train", spec.vuln_train);
    let vuln_test = vuln("vuln-test", spec.vuln_test);

    Ok(SynthOutput {
        corpus,
        duplicates,
        seeds,
        lexicon: lexicon.into_iter().collect(),
        verbs,
        eval_docs,
        retrieval,
        adversarial,
        decoys,
        cross_train,
        ner_train,
        ner_test,
        vuln_train,
        vuln_test,
    })
}

/// Every distinct token the fixed grammar can emit.
pub fn grammar_tokens() -> BTreeSet<String> {
    let mut words: Vec<&str> = Vec::new();
    for (v, objs) in FRAMES.iter().chain(GENERAL_FRAMES) {
        words.push(v);
        words.extend(objs.iter());
    }
    for pool in [
        SUBJECT_NOUNS, ADJECTIVES, HOST_NOUNS, MALWARE, ACTORS, SYSTEMS, COMPONENTS, WEAKNESSES, IMPACTS, DOMAIN_HEADS,
        DOMAIN_TAILS, TLDS, OCTETS, GENERAL_SUBJECTS, TECH_SENTENCES, NAV, FUNC_NAMES, BUF_NAMES, SRC_NAMES,
        LEN_NAMES, AUX_NAMES, BUF_SIZES, STRUCTS, LOG_WORDS,
    ] {
        words.extend(pool.iter());
    }
    let mut out: BTreeSet<String> = words.iter().flat_map(|w| tokenize(w)).collect();
    out.extend(tokenize(TEMPLATE_WORDS));
    out.extend(tokenize(", . : ? | - ( ) { } [ ] ; * = + |= >= < -> \" % / ! ' _"));
    out.extend((2017..2024).map(|y| y.to_string()));
    out.extend((0..40).map(|k| (1000 + 37 * k).to_string()));
    out.extend((0..10).map(|d| d.to_string()));
    out
}

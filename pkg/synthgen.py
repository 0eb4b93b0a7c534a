"""
Deterministic generator of controlled "sabotaged" corpora.

Every document is about one entity named only in its first chunk once sabotage applies; later chunks
refer to it by pronoun, while queries always name the entity. Retrieving the right chunk then needs
document context.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

from core import AnswerSpan, ContextEmbError, Corpus, Document, Query
from utils import philox

LOG = logging.getLogger(__name__)

CHUNK_SEPARATOR = "\n\n"
ENTITY_PREFIX = "Entity-"
MAX_ENTITIES = 10000


class SynthError(ContextEmbError, ValueError):
    module = "synthgen"


@dataclass(frozen=True)
class FactTemplate:
    name: str
    statement: str  # uses {subj} at sentence start and {value}
    question: str  # completed as "<question> Entity-0042?"
    values: Tuple[str, ...]


CITIES = ("Lyon", "Porto", "Genoa", "Leipzig", "Seville", "Bruges", "Krakow", "Turin", "Malmo", "Bilbao",
          "Nantes", "Graz", "Utrecht", "Cork", "Split", "Valencia", "Dortmund", "Lille", "Braga", "Basel")
CLUBS = ("Northgate Rovers", "Harbor City", "Union Vale", "Red Lions", "Atletico Sur", "Blue Falcons",
         "Real Oriente", "Sporting Lago", "Dynamo Kestrel", "Olympic Cedar", "Racing Norte", "FC Alder")
TROPHIES = ("Continental Shield", "Golden Boot", "Silver Cup", "Federation Plate", "Coastal Trophy",
            "Winter Crown", "Heritage Bowl", "Crystal Medal")
YEARS = tuple(str(y) for y in range(1984, 2021))
COACHES = ("Aldo Brenner", "Mira Castell", "Jonas Hale", "Petra Lindqvist", "Rui Marques", "Ilse Vogt",
           "Tomas Ferrer", "Nadia Ossei", "Colm Breen", "Sven Ahlgren")
STADIUMS = ("Ravensfield Park", "Estadio Marino", "Kestrel Arena", "Old Quay Ground", "Lindenhof",
            "Stade des Pins", "Harbour Bowl", "Miller Road")
DOGS = ("Biscuit", "Rufus", "Pepper", "Luna", "Bruno", "Maple", "Ziggy", "Nala", "Otis", "Pixel")
INSTRUMENTS = ("cello", "trumpet", "banjo", "harmonica", "clarinet", "ukulele", "accordion", "bassoon")
UNIVERSITIES = ("Westbrook University", "Colegio Alto", "Hanse Institute", "Lakeside College",
                "Universita Serena", "Northern Polytechnic")
RIVALS = ("Marco Ferretti", "Lena Kowalski", "Duncan Reyes", "Ana Sobral", "Viktor Hals", "Emeka Obi",
          "Sofia Brandt", "Kenji Arai")
CHARITIES = ("Kick Forward", "Open Pitch", "Green Goals", "Bright Boots", "Second Half", "Home Ground")
BRANDS = ("Stridewell", "Kondor", "Apexa", "Volte", "Marlin Sport", "Tessera")
NICKNAMES = ("the Engine", "the Wall", "the Comet", "the Professor", "the Fox", "the Anchor", "the Arrow")
MEMOIRS = ("Beyond the Whistle", "Mud and Glory", "The Long Season", "Ninety Minutes", "Against the Wind",
           "Last Touch")

DEFAULT_FACTS = (
    FactTemplate("birth_city", "{subj} was born in the city of {value}.", "What is the birth city of", CITIES),
    FactTemplate("club", "{subj} signed a first professional contract with {value}.",
                 "Which club gave a first professional contract to", CLUBS),
    FactTemplate("trophy", "{subj} lifted the {value} after a famous final.",
                 "Which trophy was lifted after a famous final by", TROPHIES),
    FactTemplate("debut_year", "{subj} made a senior debut in {value}.", "In which year was the senior debut of", YEARS),
    FactTemplate("coach", "{subj} was mentored for years by coach {value}.", "Which coach mentored", COACHES),
    FactTemplate("stadium", "{subj} scored a hundredth goal at {value}.",
                 "At which stadium was the hundredth goal scored by", STADIUMS),
    FactTemplate("dog", "{subj} adopted a dog called {value}.", "What is the name of the dog adopted by", DOGS),
    FactTemplate("instrument", "{subj} plays the {value} in spare time.",
                 "Which instrument is played in spare time by", INSTRUMENTS),
    FactTemplate("university", "{subj} studied economics at {value}.", "Which university taught economics to",
                 UNIVERSITIES),
    FactTemplate("rival", "{subj} had a long rivalry with {value}.", "Who had a long rivalry with", RIVALS),
    FactTemplate("charity", "{subj} founded a charity named {value}.", "Which charity was founded by", CHARITIES),
    FactTemplate("injury_year", "{subj} suffered a serious knee injury in {value}.",
                 "In which year did a serious knee injury strike", YEARS),
    FactTemplate("sponsor", "{subj} signed a boot deal with {value}.", "Which brand signed a boot deal with", BRANDS),
    FactTemplate("nickname", "{subj} was nicknamed {value} by supporters.",
                 "Which nickname did supporters give to", NICKNAMES),
    FactTemplate("retirement_city", "{subj} plans to settle in {value} after retiring.",
                 "Which city is the planned retirement home of", CITIES),
    FactTemplate("memoir", "{subj} published a memoir titled {value}.",
                 "What is the title of the memoir published by", MEMOIRS),
)

DEFAULT_FILLERS = (
    "{subj} often spoke about this period in interviews.",
    "{subj} remembers those years with real fondness.",
    "{subj} trained hard every single morning back then.",
    "{subj} kept in touch with many old teammates.",
    "{subj} described that season as a turning point.",
    "{subj} rarely discussed it with journalists.",
    "{subj} later called it a lesson in patience.",
    "{subj} credits family support for much of it.",
)

PROFESSIONS = ("footballer", "goalkeeper", "midfielder", "striker", "defender", "winger")
COUNTRIES = ("Portugal", "Norway", "Chile", "Ghana", "Austria", "Japan", "Ireland", "Croatia", "Peru", "Wales")


@dataclass(frozen=True)
class SynthConfig:
    n_docs: int = 100
    chunks_per_doc: int = 8
    facts_per_chunk: int = 1
    filler_per_chunk: int = 2
    sabotage_rate: float = 1.0
    queries_per_chunk: int = 1
    seed: int = 7
    id_offset: int = 0
    facts: Tuple[FactTemplate, ...] = field(default=DEFAULT_FACTS, repr=False)
    fillers: Tuple[str, ...] = field(default=DEFAULT_FILLERS, repr=False)

    def __post_init__(self):
        if self.n_docs < 2 or self.chunks_per_doc < 2:
            raise SynthError("n_docs and chunks_per_doc must both be >= 2")
        if not 0.0 <= self.sabotage_rate <= 1.0:
            raise SynthError(f"sabotage_rate must lie in [0, 1], got {self.sabotage_rate}")
        if self.facts_per_chunk < 1 or not 1 <= self.queries_per_chunk <= self.facts_per_chunk:
            raise SynthError("need facts_per_chunk >= 1 and 1 <= queries_per_chunk <= facts_per_chunk")
        if self.chunks_per_doc * self.facts_per_chunk > len(self.facts):
            raise SynthError(
                f"fact pool exhausted: {self.chunks_per_doc} chunks x {self.facts_per_chunk} facts "
                f"needs {self.chunks_per_doc * self.facts_per_chunk} templates, only {len(self.facts)} available"
            )
        if not 0 <= self.filler_per_chunk <= len(self.fillers):
            raise SynthError(f"filler pool exhausted: {self.filler_per_chunk} > {len(self.fillers)}")
        if self.id_offset < 0 or self.id_offset + self.n_docs > MAX_ENTITIES:
            raise SynthError(f"entity ids {self.id_offset}..{self.id_offset + self.n_docs - 1} exceed 4 digits")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("facts", "fillers")}


def entity_name(entity_id: int) -> str:
    return f"{ENTITY_PREFIX}{entity_id:04d}"


def _render(template: str, subj: str, value: str = "") -> Tuple[str, int]:
    """Sentence text and the offset of {value} inside it (-1 when absent)."""
    text = template.format(subj=subj, value=value)
    if "{value}" not in template:
        return text, -1
    return text, len(template.split("{value}")[0].format(subj=subj))


def _generate_document(config: SynthConfig, entity_id: int) -> Tuple[Document, List[Query]]:
    # every draw happens whatever the sabotage rate, so corpora at different rates share all facts
    rng = philox(config.seed, "document", entity_id)
    entity = entity_name(entity_id)
    pronoun = "She" if rng.random() < 0.5 else "He"
    profession = PROFESSIONS[rng.integers(len(PROFESSIONS))]
    country = COUNTRIES[rng.integers(len(COUNTRIES))]
    n_facts = config.chunks_per_doc * config.facts_per_chunk
    fact_order = rng.permutation(len(config.facts))[:n_facts]
    values = [config.facts[i].values[rng.integers(len(config.facts[i].values))] for i in fact_order]
    filler_choice = [rng.permutation(len(config.fillers))[:config.filler_per_chunk] for _ in range(config.chunks_per_doc)]
    sentence_orders = [rng.permutation(config.facts_per_chunk + config.filler_per_chunk) for _ in range(config.chunks_per_doc)]
    coins = rng.random(config.chunks_per_doc)

    doc_id = f"doc-{entity_id:04d}"
    text_parts: List[str] = []
    spans: List[Tuple[int, int]] = []
    queries: List[Query] = []
    cursor = 0

    for c in range(config.chunks_per_doc):
        sabotaged = c > 0 and coins[c] < config.sabotage_rate
        subj = pronoun if sabotaged else entity
        sentences = []  # (text, value offset, fact index)
        for j in range(config.facts_per_chunk):
            f = c * config.facts_per_chunk + j
            sentence, offset = _render(config.facts[fact_order[f]].statement, subj, values[f])
            sentences.append((sentence, offset, f))
        for i in filler_choice[c]:
            sentences.append((_render(config.fillers[i], subj)[0], -1, None))
        sentences = [sentences[i] for i in sentence_orders[c]]

        chunk_parts = []
        if c == 0:
            chunk_parts.append(f"{entity} is a {profession} from {country}.")
        answer_offsets = {}
        length = len(" ".join(chunk_parts)) + (1 if chunk_parts else 0)
        for sentence, offset, f in sentences:
            if f is not None:
                answer_offsets[f] = cursor + length + offset
            chunk_parts.append(sentence)
            length += len(sentence) + 1
        chunk_text = " ".join(chunk_parts)
        if c < config.chunks_per_doc - 1:
            chunk_text += CHUNK_SEPARATOR
        spans.append((cursor, cursor + len(chunk_text)))
        text_parts.append(chunk_text)

        for j in range(config.queries_per_chunk):
            f = c * config.facts_per_chunk + j
            start = answer_offsets[f]
            queries.append(Query(
                query_id=f"q-{entity_id:04d}-{c:02d}-{j}",
                text=f"{config.facts[fact_order[f]].question} {entity}?",
                gold=frozenset({(doc_id, c)}),
                answer_span=AnswerSpan(doc_id, start, start + len(values[f])),
            ))
        cursor += len(chunk_text)

    return Document.from_spans(doc_id, "".join(text_parts), spans), queries


def generate(config: SynthConfig = SynthConfig()) -> Corpus:
    documents: Dict[str, Document] = {}
    queries: List[Query] = []
    for entity_id in range(config.id_offset, config.id_offset + config.n_docs):
        doc, doc_queries = _generate_document(config, entity_id)
        documents[doc.doc_id] = doc
        queries.extend(doc_queries)
    LOG.debug("Generated %d documents and %d queries at sabotage rate %.2f",
              len(documents), len(queries), config.sabotage_rate)
    return Corpus(documents, tuple(queries)).validate()


def sabotage_sweep_corpora(config: SynthConfig, p_values: Sequence[float]) -> List[Corpus]:
    """One corpus per sabotage rate; same seed, so they differ only in which mentions became pronouns."""
    return [generate(replace(config, sabotage_rate=p)) for p in p_values]


def artificial_long_documents(corpus: Corpus, seed: int = 0) -> Corpus:
    """Stitch chunks of unrelated documents into artificial long documents.

    Artificial document j takes chunk i from source document order[(j + i) % n], so every source
    chunk is used exactly once and no artificial document holds two chunks of the same source as
    long as documents have fewer chunks than the corpus has documents.
    """
    doc_ids = corpus.doc_ids
    n = len(doc_ids)
    order = [doc_ids[i] for i in philox(seed, "artificial").permutation(n)]
    longest = max(len(doc.chunks) for doc in corpus.documents.values())
    if longest > n:
        raise SynthError(f"need more documents ({n}) than chunks per document ({longest}) to stitch unrelated chunks")

    documents: Dict[str, Document] = {}
    moved: Dict[Tuple[str, int], Tuple[str, int, int]] = {}  # source chunk -> (new doc, new index, char shift)
    for j in range(n):
        new_id = f"art-{j:04d}"
        pieces = []
        for i in range(longest):
            source = corpus.documents[order[(j + i) % n]]
            if i < len(source.chunks):
                pieces.append((source, i, source.chunk_text(i).rstrip()))
        text_parts, spans, cursor = [], [], 0
        for position, (source, i, text) in enumerate(pieces):
            if position < len(pieces) - 1:
                text += CHUNK_SEPARATOR
            moved[(source.doc_id, i)] = (new_id, position, cursor - source.chunks[i].start)
            spans.append((cursor, cursor + len(text)))
            text_parts.append(text)
            cursor += len(text)
        documents[new_id] = Document.from_spans(new_id, "".join(text_parts), spans)

    queries = []
    for query in corpus.queries:
        gold = frozenset(moved[ref][:2] for ref in query.gold)
        answer_span = None
        span = query.answer_span
        if span is not None:
            source = corpus.documents[span.doc_id]
            for chunk in source.chunks:
                kept_end = chunk.start + len(source.chunk_text(chunk.chunk_index).rstrip())
                if chunk.start <= span.start and span.end <= kept_end:
                    new_id, _, shift = moved[(span.doc_id, chunk.chunk_index)]
                    answer_span = AnswerSpan(new_id, span.start + shift, span.end + shift)
                    break
        queries.append(Query(query.query_id, query.text, gold, answer_span))
    return Corpus(documents, tuple(queries)).validate()

"""Question templates, functional programs and the answer oracle."""
from .generate import (AnswerBalancer, QARecord, QuestionExhaustion, encode_text,
                       generate_dataset_questions, generate_questions, instantiate,
                       read_records, shared_question_records, tokenize, vocabulary,
                       write_records)
from .naive import execute_naive
from .program import (ANSWER_SETS, LABELS, QUESTION_TYPES, IllPosed, Node, ProgramError,
                      execute, has_temporal_relation, validate_program)
from .templates import Template, builtin_templates, load_templates, save_templates

__all__ = [
    "ANSWER_SETS", "LABELS", "QUESTION_TYPES", "AnswerBalancer", "IllPosed", "Node",
    "ProgramError", "QARecord", "QuestionExhaustion", "Template", "builtin_templates",
    "encode_text", "execute", "execute_naive", "generate_dataset_questions",
    "generate_questions", "has_temporal_relation", "instantiate", "load_templates",
    "read_records", "save_templates", "shared_question_records", "tokenize",
    "validate_program", "vocabulary", "write_records",
]

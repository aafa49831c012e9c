"""
JSON documents exchanged between pipeline stages.

Output is byte-stable: keys are emitted in a fixed order, collections in
canonical order, and every file ends with a newline.
"""
import json
import logging
from pathlib import Path

from .exceptions import FormatError
from .models import VOID_8BIT, ClassRef, Taxonomy, UniversalClass, UniversalTaxonomy, validate_taxonomy

logger = logging.getLogger(__name__)


def dumps(payload):
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding='utf-8')
    logger.debug(f"Wrote {path}")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Failed to parse JSON document {path}: {e}")
        raise FormatError(f"malformed JSON in {path}: {e}", path=str(path))


def _require(payload, key, path):
    if key not in payload:
        raise FormatError(f"missing key '{key}' in {path}", path=str(path))
    return payload[key]


def ref_from_dict(data):
    return ClassRef(str(data['dataset']), int(data['class']))


# --- Taxonomy ---------------------------------------------------------------

def taxonomy_to_dict(taxonomy):
    payload = {'dataset_id': taxonomy.dataset_id, 'classes': list(taxonomy.classes)}
    if taxonomy.void_label != VOID_8BIT:
        payload['void_label'] = taxonomy.void_label
    if taxonomy.is_meta:
        payload['meta'] = True
    return payload


def taxonomy_from_dict(payload, source='<memory>'):
    return Taxonomy(
        dataset_id=str(_require(payload, 'dataset_id', source)),
        classes=[str(name) for name in _require(payload, 'classes', source)],
        void_label=int(payload.get('void_label', VOID_8BIT)),
        is_meta=bool(payload.get('meta', False)),
    )


def load_taxonomy(path):
    taxonomy = taxonomy_from_dict(read_json(path), source=path)
    violations = validate_taxonomy(taxonomy)
    if violations:
        messages = '; '.join(message for error in violations for message in error.messages)
        raise FormatError(f"invalid taxonomy {path}: {messages}", path=str(path))
    return taxonomy


def save_taxonomy(taxonomy, path):
    write_json(path, taxonomy_to_dict(taxonomy))


# --- UniversalTaxonomy ------------------------------------------------------

def universal_to_dict(universal):
    return {
        'universal_classes': [
            {
                'name': universal_class.name,
                'members': [ref.as_dict() for ref in sorted(universal_class.members)],
            }
            for universal_class in universal.universal_classes
        ],
        'mappings': {
            dataset_id: [sorted(targets) for targets in universal.mappings[dataset_id]]
            for dataset_id in sorted(universal.mappings)
        },
        'taxonomies': {
            dataset_id: taxonomy_to_dict(universal.taxonomies[dataset_id])
            for dataset_id in sorted(universal.taxonomies)
        },
    }


def universal_from_dict(payload, source='<memory>'):
    try:
        classes = [
            UniversalClass(str(item['name']), [ref_from_dict(member) for member in item['members']])
            for item in _require(payload, 'universal_classes', source)
        ]
        mappings = {
            str(dataset_id): [frozenset(int(target) for target in row) for row in rows]
            for dataset_id, rows in _require(payload, 'mappings', source).items()
        }
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed universal taxonomy {source}: {e}", path=str(source))
    taxonomies = {
        str(dataset_id): taxonomy_from_dict(data, source)
        for dataset_id, data in payload.get('taxonomies', {}).items()
    }
    return UniversalTaxonomy(classes, mappings, taxonomies)


def load_universal(path):
    return universal_from_dict(read_json(path), source=path)


def save_universal(universal, path):
    write_json(path, universal_to_dict(universal))


# --- JSON lines -------------------------------------------------------------

def write_json_lines(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    logger.debug(f"Wrote {len(records)} record(s) to {path}")


def read_json_lines(path):
    path = Path(path)
    records = []
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise FormatError(f"malformed JSON line {number} in {path}: {e}", path=str(path))
    return records

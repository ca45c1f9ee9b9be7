"""
Discovers all blocks and generates a list of them in the docs
under the Blocks Catalog heading.
"""

from pathlib import Path
from textwrap import dedent

import mkdocs_gen_files
from prefect.blocks.core import Block
from prefect.utilities.dispatch import get_registry_for_type
from prefect.utilities.importtools import from_qualified_name, to_qualified_name

COLLECTION_SLUG = "prefect_rbf_fmm"


def find_module_blocks():
    blocks = get_registry_for_type(Block)
    module_blocks = {}
    for block in blocks.values():
        qualified_name = to_qualified_name(block)
        if not qualified_name.startswith(COLLECTION_SLUG):
            continue
        module_path = qualified_name.rsplit(".", 1)[0]
        module_blocks.setdefault(module_path, []).append(block.__name__)
    return module_blocks


def insert_blocks_catalog(generated_file):
    module_blocks = find_module_blocks()
    if not module_blocks:
        return
    generated_file.write(
        dedent(
            f"""
            Below is a list of Blocks available for registration in
            `prefect-rbf-fmm`.

            To register blocks in this module to
            [view and edit them](https://docs.prefect.io/ui/blocks/)
            on Prefect Cloud, first install the collection, then
            ```bash
            prefect block register -m {COLLECTION_SLUG}
            ```
            """
        )
    )
    for module_path, block_names in module_blocks.items():
        module_title = module_path.split(".")[-1].replace("_", " ").title()
        generated_file.write(f"## [{module_title} Module][{module_path}]\n")
        for block_name in block_names:
            block_obj = from_qualified_name(f"{module_path}.{block_name}")
            block_description = block_obj.get_description()
            if not block_description.endswith("."):
                block_description += "."
            generated_file.write(
                f"[{block_name}][{module_path}.{block_name}]\n\n{block_description}\n\n"
            )
            generated_file.write(
                dedent(
                    f"""
                    To run an experiment from a saved {block_name}:
                    ```python
                    from {module_path} import {block_name}
                    from prefect_rbf_fmm.flows import fmm_matvec_flow

                    fmm_matvec_flow({block_name}.load("MY_BLOCK_NAME"))
                    ```
                    """
                )
            )


blocks_catalog_path = Path("blocks_catalog.md")
with mkdocs_gen_files.open(blocks_catalog_path, "w") as generated_file:
    insert_blocks_catalog(generated_file)

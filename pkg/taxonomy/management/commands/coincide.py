from taxonomy.management.commands import cooccur


class Command(cooccur.Command):
    help = ("Accumulates a coincidence matrix between two predictions (or pseudo-labels) on the same "
            "images, for datasets without usable ground truth.")
    row_label = 'row-side predictions'
    col_label = 'column-side predictions'

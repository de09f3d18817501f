"""Create benchmark_runs and task_results

Revision ID: 5f2c1e7a9d30
Revises:
Create Date: 2026-10-19 10:12:41.518203

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '5f2c1e7a9d30'
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table(
        'benchmark_runs',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'),
                  nullable=False),
        sa.Column('seeds', sa.Integer(), nullable=False),
        sa.Column('first_seed', sa.Integer(), nullable=False),
        sa.Column('k_candidates', sa.Integer(), nullable=False),
        sa.Column('horizon', sa.Integer(), nullable=False),
        sa.Column('epsilon', sa.Float(), nullable=False),
        sa.Column('p_fail', sa.Float(), nullable=True, comment='NULL: вероятности из файлов сцен'),
        sa.Column('note', sa.Text(), nullable=True),
        sa.PrimaryKeyConstraint('id'),
    )
    op.create_table(
        'task_results',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('run_id', sa.Integer(), nullable=False),
        sa.Column('config', sa.String(length=32), nullable=False),
        sa.Column('task', sa.String(length=64), nullable=False),
        sa.Column('episodes', sa.Integer(), nullable=False),
        sa.Column('success_rate', sa.Float(), nullable=False),
        sa.Column('mean_steps', sa.Float(), nullable=False),
        sa.Column('planning_failures', sa.Integer(), nullable=False),
        sa.Column('promptable_failures', sa.Integer(), nullable=False),
        sa.Column('grounding_failures', sa.Integer(), nullable=False),
        sa.Column('mean_navigation_s', sa.Float(), nullable=False),
        sa.Column('mean_manipulation_s', sa.Float(), nullable=False),
        sa.Column('mean_planning_s', sa.Float(), nullable=False),
        sa.Column('gate_violations', sa.Integer(), nullable=False),
        sa.Column('stop_agreement', sa.Float(), nullable=True),
        sa.ForeignKeyConstraint(['run_id'], ['benchmark_runs.id'], ondelete='CASCADE'),
        sa.PrimaryKeyConstraint('id'),
        sa.UniqueConstraint('run_id', 'config', 'task', name='_run_config_task_uc'),
    )
    op.create_index('ix_task_results_task_config', 'task_results', ['task', 'config'], unique=False)


def downgrade() -> None:
    """Downgrade schema."""
    op.drop_index('ix_task_results_task_config', table_name='task_results')
    op.drop_table('task_results')
    op.drop_table('benchmark_runs')

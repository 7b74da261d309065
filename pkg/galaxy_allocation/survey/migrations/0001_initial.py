# Generated by Django 5.2 on 2026-10-19 09:12

import django.db.models.deletion
import django.utils.timezone
import model_utils.fields
from django.db import migrations, models


STATUS_CHOICES = [
    ('pending', 'pending'),
    ('running', 'running'),
    ('completed', 'completed'),
    ('failed', 'failed'),
]


def run_fields():
    return [
        ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
        ('created', model_utils.fields.AutoCreatedField(default=django.utils.timezone.now, editable=False, verbose_name='created')),
        ('modified', model_utils.fields.AutoLastModifiedField(default=django.utils.timezone.now, editable=False, verbose_name='modified')),
        ('status', model_utils.fields.StatusField(choices=STATUS_CHOICES, default='pending', max_length=100, no_check_for_status=True, verbose_name='status')),
        ('status_changed', model_utils.fields.MonitorField(default=django.utils.timezone.now, monitor='status', verbose_name='status changed')),
        ('seed', models.DecimalField(decimal_places=0, default=0, max_digits=20)),
        ('config', models.JSONField(default=dict)),
        ('config_digest', models.CharField(blank=True, max_length=64)),
        ('out_dir', models.CharField(max_length=500)),
        ('error', models.TextField(blank=True)),
    ]


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='BaselineSearch',
            fields=run_fields() + [
                ('policy', models.CharField(choices=[('baseline1', 'Luminosity threshold'), ('baseline2', 'Beta template')], max_length=16)),
                ('checkpoint', models.CharField(max_length=500)),
                ('best_genome', models.JSONField(blank=True, default=list)),
                ('best_fitness', models.FloatField(blank=True, null=True)),
                ('history', models.JSONField(blank=True, default=list)),
            ],
            options={
                'verbose_name_plural': 'baseline searches',
                'ordering': ['-created', '-id'],
                'abstract': False,
            },
        ),
        migrations.CreateModel(
            name='EvaluationRun',
            fields=run_fields() + [
                ('checkpoint', models.CharField(max_length=500)),
                ('phi_protocol', models.CharField(max_length=32)),
                ('n_fields', models.PositiveIntegerField()),
            ],
            options={
                'ordering': ['-created', '-id'],
                'abstract': False,
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=run_fields() + [
                ('resume_from', models.CharField(blank=True, max_length=500)),
                ('steps_completed', models.PositiveIntegerField(default=0)),
                ('final_loss', models.FloatField(blank=True, null=True)),
                ('final_sum_r', models.FloatField(blank=True, null=True)),
                ('final_tau', models.FloatField(blank=True, null=True)),
                ('stopped_early', models.BooleanField(default=False)),
                ('checkpoint', models.CharField(blank=True, max_length=500)),
            ],
            options={
                'ordering': ['-created', '-id'],
                'abstract': False,
            },
        ),
        migrations.CreateModel(
            name='MethodScore',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('method', models.CharField(max_length=32)),
                ('rank', models.PositiveIntegerField()),
                ('precision', models.FloatField(blank=True, null=True)),
                ('std', models.FloatField()),
                ('bias', models.FloatField()),
                ('n_fields', models.PositiveIntegerField()),
                ('evaluation', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='scores', to='survey.evaluationrun')),
            ],
            options={
                'ordering': ['evaluation', 'rank'],
                'constraints': [models.UniqueConstraint(fields=('evaluation', 'method'), name='unique_method_per_evaluation')],
            },
        ),
    ]

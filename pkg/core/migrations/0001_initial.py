# Generated by Django 5.2 on 2026-10-18 09:12

import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='EstimationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('data_path', models.CharField(max_length=500)),
                ('config_digest', models.CharField(db_index=True, max_length=64)),
                ('engine', models.CharField(choices=[('exact', 'Exact'), ('mc', 'Monte Carlo')], default='exact', max_length=5)),
                ('seed', models.BigIntegerField()),
                ('mc_draws', models.PositiveIntegerField(null=True)),
                ('n_groups', models.PositiveIntegerField()),
                ('n_individuals', models.PositiveIntegerField()),
                ('propensity_converged', models.BooleanField(default=True)),
                ('config', models.JSONField(default=dict)),
                ('parameter_counts', models.JSONField(default=dict)),
                ('created', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ('-created',),
                'get_latest_by': 'created',
            },
        ),
        migrations.CreateModel(
            name='SimulationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('scenario', models.CharField(choices=[('i', 'Both models correct'), ('ii', 'Propensity model wrong'), ('iii', 'Outcome model wrong'), ('iv', 'Both models wrong')], max_length=3)),
                ('k', models.PositiveIntegerField()),
                ('group_size', models.PositiveIntegerField()),
                ('alpha', models.FloatField()),
                ('replications', models.PositiveIntegerField()),
                ('master_seed', models.BigIntegerField()),
                ('failures', models.PositiveIntegerField(default=0)),
                ('config', models.JSONField(default=dict)),
                ('created', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ('-created',),
                'get_latest_by': 'created',
                'constraints': [
                    models.CheckConstraint(condition=models.Q(('alpha__gt', 0), ('alpha__lt', 1)), name='simulation_alpha_in_unit_interval', violation_error_message='Policy parameter must lie strictly between 0 and 1'),
                    models.CheckConstraint(condition=models.Q(('failures__lte', models.F('replications'))), name='simulation_failures_bounded'),
                ],
            },
        ),
        migrations.CreateModel(
            name='EffectResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('family', models.CharField(choices=[('IPW', 'Inverse probability weighted'), ('REG', 'Outcome regression'), ('DRBC', 'DR residual bias correction'), ('DRWLS', 'DR weighted coefficients'), ('DRPICOV', 'DR propensity-based covariate')], max_length=8)),
                ('kind', models.CharField(choices=[('DE', 'Direct'), ('IE', 'Indirect'), ('TE', 'Total'), ('OE', 'Overall')], max_length=2)),
                ('alpha1', models.FloatField(validators=[django.core.validators.MinValueValidator(0), django.core.validators.MaxValueValidator(1)])),
                ('alpha0', models.FloatField(validators=[django.core.validators.MinValueValidator(0), django.core.validators.MaxValueValidator(1)])),
                ('estimate', models.FloatField()),
                ('se', models.FloatField(validators=[django.core.validators.MinValueValidator(0)])),
                ('lower', models.FloatField()),
                ('upper', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='results', to='core.estimationrun')),
            ],
            options={
                'ordering': ('run', 'family', 'kind', 'alpha1', 'alpha0'),
                'constraints': [
                    models.CheckConstraint(condition=models.Q(('alpha1__gt', 0), ('alpha1__lt', 1), ('alpha0__gt', 0), ('alpha0__lt', 1)), name='effect_alpha_in_unit_interval', violation_error_message='Policy parameters must lie strictly between 0 and 1'),
                    models.CheckConstraint(condition=models.Q(('se__gte', 0)), name='effect_se_non_negative'),
                    models.CheckConstraint(condition=models.Q(('lower__lte', models.F('upper'))), name='effect_interval_ordered', violation_error_message='Lower confidence limit exceeds the upper one'),
                    models.UniqueConstraint(fields=('run', 'family', 'kind', 'alpha1', 'alpha0'), name='effect_unique_per_run'),
                ],
            },
        ),
        migrations.CreateModel(
            name='SummaryRow',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('family', models.CharField(choices=[('IPW', 'Inverse probability weighted'), ('REG', 'Outcome regression'), ('DRBC', 'DR residual bias correction'), ('DRWLS', 'DR weighted coefficients'), ('DRPICOV', 'DR propensity-based covariate')], max_length=8)),
                ('estimand', models.CharField(choices=[('mu0', 'Mean outcome, untreated'), ('mu1', 'Mean outcome, treated'), ('de', 'Direct effect')], max_length=3)),
                ('truth', models.FloatField()),
                ('bias', models.FloatField()),
                ('sd', models.FloatField(validators=[django.core.validators.MinValueValidator(0)])),
                ('ase', models.FloatField(validators=[django.core.validators.MinValueValidator(0)])),
                ('coverage', models.FloatField(validators=[django.core.validators.MinValueValidator(0), django.core.validators.MaxValueValidator(1)])),
                ('n_reps', models.PositiveIntegerField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='rows', to='core.simulationrun')),
            ],
            options={
                'ordering': ('run', 'family', 'estimand'),
                'constraints': [
                    models.CheckConstraint(condition=models.Q(('coverage__gte', 0), ('coverage__lte', 1)), name='summary_coverage_is_probability', violation_error_message='Coverage must be between 0 and 1'),
                    models.CheckConstraint(condition=models.Q(('sd__gte', 0), ('ase__gte', 0)), name='summary_spread_non_negative'),
                    models.UniqueConstraint(fields=('run', 'family', 'estimand'), name='summary_unique_per_run'),
                ],
            },
        ),
    ]

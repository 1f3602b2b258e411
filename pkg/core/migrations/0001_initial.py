# Generated by Django 4.2.7 on 2026-10-17 10:12

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Experiment',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(blank=True, max_length=255)),
                ('seed', models.BigIntegerField(default=0)),
                ('config', models.JSONField(default=dict)),
                ('status', models.CharField(choices=[('pending', 'pending'), ('running', 'running'), ('done', 'done'), ('failed', 'failed')], default='pending', max_length=16)),
                ('summary', models.JSONField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
        ),
        migrations.CreateModel(
            name='RoundMetric',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('rep', models.PositiveIntegerField()),
                ('round', models.PositiveIntegerField()),
                ('arm', models.CharField(choices=[('fedmint', 'fedmint'), ('vanilla', 'vanilla'), ('fedmint_random_bootstrap', 'fedmint_random_bootstrap')], max_length=64)),
                ('server_id', models.CharField(max_length=64)),
                ('global_accuracy', models.FloatField(null=True)),
                ('mean_reward', models.FloatField(default=0)),
                ('cohort_size', models.PositiveIntegerField(default=0)),
                ('bootstrap_inquiries', models.PositiveIntegerField(default=0)),
                ('bootstrap_refusals', models.PositiveIntegerField(default=0)),
                ('bootstrap_mse', models.FloatField(null=True)),
                ('experiment', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='rounds', to='core.experiment')),
            ],
            options={
                'ordering': ['rep', 'round', 'arm', 'server_id'],
                'unique_together': {('experiment', 'rep', 'round', 'arm', 'server_id')},
            },
        ),
    ]
